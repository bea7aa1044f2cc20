//! Implementations behind the CLI verbs. Each command validates its whole
//! configuration and loads every input before producing any output, so a
//! bad config never leaves a partial artifact directory behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::embedding::{
    apply_projection, build_candidates, load_embeddings_text, load_matrix_text, EmbeddingSpace,
};
use crate::error::{Error, Result};
use crate::eval::synthetic::{generate, write_dataset, SyntheticParams};
use crate::eval::{eval_environment, rank_eval, rl_eval, seq_eval, AlignmentResult, Strategy};
use crate::kg::{AlignmentRole, AlignmentSet, KnowledgeGraph};
use crate::policy::checkpoint;
use crate::rng::{component_rng, derive_seed};
use crate::trainer::{metrics_csv, train, TrainOutput, ValidationPoint};

/// Training ablations selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Feed the action head a zero in place of the mutual-exclusion score.
    NoMie,
    /// Shuffle candidate order uniformly instead of sorting by similarity.
    RandEnv,
}

/// Which dial `sweep` turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKnob {
    /// Candidate targets per source (retrains per value).
    Candidates,
    /// Seq-strategy match threshold (evaluation only).
    Threshold,
    /// False-mismatch penalty (retrains per value).
    Penalty,
}

impl SweepKnob {
    fn as_str(self) -> &'static str {
        match self {
            SweepKnob::Candidates => "candidates",
            SweepKnob::Threshold => "threshold",
            SweepKnob::Penalty => "penalty",
        }
    }
}

/// Everything the data-dependent commands need in memory.
pub struct LoadedData {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub space: EmbeddingSpace,
    pub train: AlignmentSet,
    pub valid: Option<AlignmentSet>,
    pub test: AlignmentSet,
}

/// Load and cross-check every input file referenced by the config.
pub fn load_data(config: &RunConfig) -> Result<LoadedData> {
    let paths = &config.paths;
    let kg1 = KnowledgeGraph::load(&paths.kg1)?;
    let kg2 = KnowledgeGraph::load(&paths.kg2)?;
    let e1 = load_embeddings_text(&paths.embeddings1, &kg1)?;
    let mut e2 = load_embeddings_text(&paths.embeddings2, &kg2)?;
    if let Some(proj) = &paths.projection {
        let m = load_matrix_text(proj)?;
        e2 = apply_projection(&e2, &m)?;
    }
    let space = EmbeddingSpace::new(e1, e2, &kg1, &kg2)?;
    let train = AlignmentSet::load(&paths.train_links, &kg1, &kg2, AlignmentRole::TrainSeed)?;
    let valid = paths
        .valid_links
        .as_ref()
        .map(|p| AlignmentSet::load(p, &kg1, &kg2, AlignmentRole::Validation))
        .transpose()?;
    let test = AlignmentSet::load(&paths.test_links, &kg1, &kg2, AlignmentRole::Test)?;
    Ok(LoadedData {
        kg1,
        kg2,
        space,
        train,
        valid,
        test,
    })
}

fn load_run_config(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    ablation: Option<Ablation>,
) -> Result<RunConfig> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(dir) = out {
        config.output_dir = dir.to_path_buf();
    }
    if let Some(s) = seed {
        config.trainer.seed = s;
    }
    match ablation {
        Some(Ablation::NoMie) => config.trainer.disable_mie = true,
        Some(Ablation::RandEnv) => config.trainer.random_env = true,
        None => {}
    }
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    command: &'static str,
    seed: u64,
    checkpoint: &'a str,
    metrics: &'a str,
    episodes: usize,
    final_alignment_count: Option<usize>,
    best_validation: Option<ValidationPoint>,
    config: &'a RunConfig,
}

/// `train`: fit a policy and write checkpoint, metrics log, and manifest.
pub fn cmd_train(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    ablation: Option<Ablation>,
) -> Result<()> {
    let config = load_run_config(config_path, out, seed, ablation)?;
    let data = load_data(&config)?;
    let output: TrainOutput = train(
        &config.trainer,
        config.environment.schedule(),
        config.environment.false_mismatch_penalty,
        &data.kg1,
        &data.kg2,
        &data.space,
        &data.train,
        data.valid.as_ref(),
    )?;

    create_output_dir(&config.output_dir)?;
    let metrics_path = config.output_dir.join("metrics.csv");
    write_text(&metrics_path, &metrics_csv(&output.metrics))?;
    let checkpoint_path = config.output_dir.join("checkpoint.bin");
    checkpoint::save(&output.policy, &checkpoint_path)?;
    let manifest = TrainManifest {
        command: "train",
        seed: config.trainer.seed,
        checkpoint: "checkpoint.bin",
        metrics: "metrics.csv",
        episodes: output.metrics.len(),
        final_alignment_count: output.metrics.last().map(|m| m.alignment_count),
        best_validation: output.best_validation,
        config: &config,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    write_text(&config.output_dir.join("manifest.json"), &manifest_json)?;

    println!(
        "trained {} episodes (seed {}); artifacts in {}",
        output.metrics.len(),
        config.trainer.seed,
        config.output_dir.display()
    );
    if let Some(last) = output.metrics.last() {
        println!(
            "final episode: {} correct matches over {} decisions, total reward {}",
            last.alignment_count, last.episode_length, last.total_reward
        );
    }
    if let Some(best) = output.best_validation {
        println!(
            "kept weights from episode {} (validation hits@1 {})",
            best.episode, best.hits_at_1
        );
    }
    Ok(())
}

fn summary_csv(results: &[AlignmentResult]) -> String {
    let mut out = String::from("strategy,hits_at_1,precision,recall,f1\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.strategy.as_str(),
            r.metrics.hits_at_1,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1
        ));
    }
    out
}

/// `eval`: run the requested strategies over the test alignments and write
/// per-strategy results plus a summary table.
pub fn cmd_eval(
    config_path: &Path,
    checkpoint_path: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    strategies: Option<&[String]>,
) -> Result<()> {
    let mut config = load_run_config(config_path, out, seed, None)?;
    if let Some(names) = strategies {
        let parsed: Vec<Strategy> = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        config.evaluation.strategies = parsed;
        config.validate()?;
    }
    // Strategies always run (and report) in the fixed ranking, seq, rl order.
    let wanted: Vec<Strategy> = [Strategy::Ranking, Strategy::Seq, Strategy::Rl]
        .into_iter()
        .filter(|s| config.evaluation.strategies.contains(s))
        .collect();

    let data = load_data(&config)?;
    // Checkpoint problems (missing flag, bad file, wrong dimension) must
    // surface before any strategy runs.
    let policy = if wanted.contains(&Strategy::Rl) {
        let path = checkpoint_path.ok_or_else(|| {
            Error::Config("the rl strategy needs --checkpoint <trained policy>".to_string())
        })?;
        let policy = checkpoint::load(path)?;
        if policy.config.dim != data.space.dim {
            return Err(Error::DimensionMismatch {
                dim: policy.config.dim,
                hidden: policy.config.hidden,
                layers: policy.config.layers,
                expected: data.space.dim,
            });
        }
        Some(policy)
    } else {
        None
    };

    let table = build_candidates(
        &data.space,
        &data.test.sources(),
        &data.test.targets(),
        config.trainer.candidates,
    )?;
    let mut results = Vec::with_capacity(wanted.len());
    for strategy in wanted {
        let result = match strategy {
            Strategy::Ranking => rank_eval(&table, &data.test)?,
            Strategy::Seq => {
                let mut rng = component_rng(config.trainer.seed, "seq-eval");
                seq_eval(&table, &data.test, config.evaluation.seq_threshold, &mut rng)?
            }
            Strategy::Rl => {
                let mut env = eval_environment(&table, &data.test, config.trainer.seed)?;
                rl_eval(
                    policy.as_ref().unwrap(),
                    &mut env,
                    &table,
                    &data.kg1,
                    &data.kg2,
                    &data.space,
                    &data.test,
                )?
            }
        };
        results.push(result);
    }

    create_output_dir(&config.output_dir)?;
    let json = serde_json::to_string_pretty(&results)
        .map_err(|e| Error::Config(format!("results serialization: {e}")))?;
    write_text(&config.output_dir.join("results.json"), &json)?;
    write_text(&config.output_dir.join("summary.csv"), &summary_csv(&results))?;
    for r in &results {
        println!(
            "{}: hits@1={:.4} precision={:.4} recall={:.4} f1={:.4} ({} matches)",
            r.strategy.as_str(),
            r.metrics.hits_at_1,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1,
            r.matches.len()
        );
    }
    Ok(())
}

/// `generate`: write a synthetic dataset plus a ready-to-run config
/// (`run.toml`) whose relative paths keep the directory relocatable.
pub fn cmd_generate(out_dir: &Path, params: &SyntheticParams) -> Result<()> {
    let task = generate(params)?;
    create_output_dir(out_dir)?;
    let paths = write_dataset(&task, out_dir)?;
    let config = RunConfig {
        output_dir: PathBuf::from("run"),
        paths: crate::config::PathsConfig {
            kg1: PathBuf::from("rel_triples_1"),
            kg2: PathBuf::from("rel_triples_2"),
            embeddings1: PathBuf::from("emb_1.txt"),
            embeddings2: PathBuf::from("emb_2.txt"),
            projection: None,
            train_links: PathBuf::from("ent_links_train"),
            valid_links: Some(PathBuf::from("ent_links_valid")),
            test_links: PathBuf::from("ent_links_test"),
        },
        trainer: crate::trainer::TrainerConfig {
            seed: params.seed,
            ..Default::default()
        },
        environment: Default::default(),
        evaluation: Default::default(),
    };
    config.validate()?;
    let config_path = out_dir.join("run.toml");
    write_text(&config_path, &config.to_toml())?;
    println!(
        "wrote synthetic task ({} entities, block size {}) to {}",
        params.n_entities,
        params.block_size,
        out_dir.display()
    );
    for p in [
        &paths.kg1, &paths.kg2, &paths.emb1, &paths.emb2, &paths.train, &paths.valid, &paths.test,
        &config_path,
    ] {
        println!("  {}", p.display());
    }
    Ok(())
}

struct SweepRow {
    value: String,
    result: AlignmentResult,
    train_seconds: f64,
    eval_seconds: f64,
}

/// Evaluation repetitions per sweep row: single evaluations on small tasks
/// finish in microseconds, which makes wall-clock comparisons noisy.
const SWEEP_EVAL_REPEATS: usize = 20;

fn sweep_row(
    config: &RunConfig,
    data: &LoadedData,
    knob: SweepKnob,
    raw_value: &str,
) -> Result<SweepRow> {
    let mut config = config.clone();
    // Isolate each worker's randomness while keeping it reproducible.
    config.trainer.seed = derive_seed(
        config.trainer.seed,
        &format!("sweep:{}={raw_value}", knob.as_str()),
    );
    let parse_float = |what: &str| -> Result<f64> {
        raw_value
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("invalid {what} value '{raw_value}'")))
    };
    match knob {
        SweepKnob::Candidates => {
            let k: usize = raw_value
                .parse()
                .map_err(|_| Error::Config(format!("invalid candidate count '{raw_value}'")))?;
            if k == 0 {
                return Err(Error::Config("candidate count must be positive".to_string()));
            }
            config.trainer.candidates = k;
        }
        SweepKnob::Threshold => {
            config.evaluation.seq_threshold = parse_float("threshold")?;
        }
        SweepKnob::Penalty => {
            config.environment.false_mismatch_penalty = parse_float("penalty")?;
        }
    }
    config.validate()?;

    let table = build_candidates(
        &data.space,
        &data.test.sources(),
        &data.test.targets(),
        config.trainer.candidates,
    )?;
    let (result, train_seconds, eval_seconds) = match knob {
        SweepKnob::Threshold => {
            let started = Instant::now();
            let mut result = None;
            for rep in 0..SWEEP_EVAL_REPEATS {
                let mut rng = component_rng(config.trainer.seed, &format!("seq-eval-{rep}"));
                let r = seq_eval(&table, &data.test, config.evaluation.seq_threshold, &mut rng)?;
                if rep == 0 {
                    result = Some(r);
                }
            }
            (result.unwrap(), 0.0, started.elapsed().as_secs_f64())
        }
        SweepKnob::Candidates | SweepKnob::Penalty => {
            let started = Instant::now();
            let output = train(
                &config.trainer,
                config.environment.schedule(),
                config.environment.false_mismatch_penalty,
                &data.kg1,
                &data.kg2,
                &data.space,
                &data.train,
                data.valid.as_ref(),
            )?;
            let train_seconds = started.elapsed().as_secs_f64();
            let started = Instant::now();
            let mut env = eval_environment(&table, &data.test, config.trainer.seed)?;
            let mut result = None;
            for rep in 0..SWEEP_EVAL_REPEATS {
                let r = rl_eval(
                    &output.policy,
                    &mut env,
                    &table,
                    &data.kg1,
                    &data.kg2,
                    &data.space,
                    &data.test,
                )?;
                if rep == 0 {
                    result = Some(r);
                }
            }
            (result.unwrap(), train_seconds, started.elapsed().as_secs_f64())
        }
    };
    Ok(SweepRow {
        value: raw_value.to_string(),
        result,
        train_seconds,
        eval_seconds,
    })
}

/// `sweep`: rerun train/eval across one knob's values and tabulate metrics
/// with wall-clock times. Values run in parallel, each with a derived seed.
pub fn cmd_sweep(
    config_path: &Path,
    knob: SweepKnob,
    values: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_run_config(config_path, out, seed, None)?;
    let values: Vec<&String> = values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config("sweep needs a non-empty list of --values".to_string()));
    }
    let data = load_data(&config)?;
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|v| sweep_row(&config, &data, knob, v))
        .collect::<Result<_>>()?;

    create_output_dir(&config.output_dir)?;
    let mut csv = String::from("knob,value,hits_at_1,precision,recall,f1,train_seconds,eval_seconds\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            knob.as_str(),
            row.value,
            row.result.metrics.hits_at_1,
            row.result.metrics.precision,
            row.result.metrics.recall,
            row.result.metrics.f1,
            row.train_seconds,
            row.eval_seconds
        ));
    }
    write_text(&config.output_dir.join("sweep.csv"), &csv)?;
    for row in &rows {
        println!(
            "{}={}: hits@1={:.4} f1={:.4} train={:.3}s eval={:.3}s",
            knob.as_str(),
            row.value,
            row.result.metrics.hits_at_1,
            row.result.metrics.f1,
            row.train_seconds,
            row.eval_seconds
        );
    }
    Ok(())
}
