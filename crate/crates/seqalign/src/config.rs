//! Declarative run configuration.
//!
//! One TOML file describes a full run: input paths, trainer
//! hyperparameters, environment schedule, and evaluation settings. Every
//! default lives here rather than in command code, so a saved config plus a
//! seed reproduces a run exactly. Relative paths are resolved against the
//! config file's directory, which keeps generated datasets relocatable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::Schedule;
use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::trainer::TrainerConfig;

/// Input file locations. `projection` optionally maps the second graph's
/// embeddings into the first's space before any similarity is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub kg1: PathBuf,
    pub kg2: PathBuf,
    pub embeddings1: PathBuf,
    pub embeddings2: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<PathBuf>,
    pub train_links: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_links: Option<PathBuf>,
    pub test_links: PathBuf,
}

/// Environment knobs: the skip schedule plus the one reward that is not
/// fixed (the false-mismatch penalty).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub skip_base: f64,
    pub skip_min: f64,
    pub decay: f64,
    pub tau: f64,
    pub false_mismatch_penalty: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let s = Schedule::default();
        EnvironmentConfig {
            skip_base: s.skip_base,
            skip_min: s.skip_min,
            decay: s.decay,
            tau: s.tau,
            false_mismatch_penalty: -10.0,
        }
    }
}

impl EnvironmentConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            skip_base: self.skip_base,
            skip_min: self.skip_min,
            decay: self.decay,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if !self.false_mismatch_penalty.is_finite() {
            return Err(Error::Config(format!(
                "false-mismatch penalty must be finite, got {}",
                self.false_mismatch_penalty
            )));
        }
        Ok(())
    }
}

/// Which strategies `eval` runs and how the seq baseline thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub strategies: Vec<Strategy>,
    pub seq_threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            strategies: vec![Strategy::Ranking, Strategy::Seq, Strategy::Rl],
            seq_threshold: 0.7,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("evaluation needs at least one strategy".to_string()));
        }
        if !(-1.0..=1.0).contains(&self.seq_threshold) {
            return Err(Error::Config(format!(
                "seq threshold must lie in [-1, 1], got {}",
                self.seq_threshold
            )));
        }
        Ok(())
    }
}

/// A complete, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Where artifacts (checkpoints, metrics, results) land.
    pub output_dir: PathBuf,
    pub paths: PathsConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    /// Parse a TOML document. Relative paths stay relative until
    /// [`RunConfig::resolve_paths`] anchors them.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{origin}: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    /// Read and validate a config file, anchoring relative paths at the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    /// Serialize back to TOML. `parse(to_toml(c)) == c` for any valid `c`.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Anchor every relative path at `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut self.output_dir);
        anchor(&mut self.paths.kg1);
        anchor(&mut self.paths.kg2);
        anchor(&mut self.paths.embeddings1);
        anchor(&mut self.paths.embeddings2);
        anchor(&mut self.paths.train_links);
        anchor(&mut self.paths.test_links);
        if let Some(p) = self.paths.projection.as_mut() {
            anchor(p);
        }
        if let Some(p) = self.paths.valid_links.as_mut() {
            anchor(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".to_string()));
        }
        self.trainer.validate()?;
        self.environment.validate()?;
        self.evaluation.validate()?;
        Ok(())
    }
}
