//! Episode collection and the policy-gradient update.
//!
//! Training alternates two phases per episode: roll the current policy
//! through one environment pass with parameters frozen (encodings are
//! computed once per episode), then replay the trace and apply
//! `α · γ^i · δ_i · ∇ln π` per step, where `δ_i = G_i − v̂(s_i)` subtracts the
//! value-head baseline. The value head regresses toward the same returns
//! with the same step size.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{build_candidates, CandidateTable, EmbeddingSpace};
use crate::env::{EnvMode, Environment, OutcomeKind, QueueOrder, Schedule, StepOutcome};
use crate::error::{Error, Result};
use crate::eval::{eval_environment, rl_eval};
use crate::kg::{AlignmentSet, KnowledgeGraph};
use crate::policy::{EncodedPair, ForwardPass, Policy, PolicyConfig, StateFeatures};
use crate::rng::component_rng;

/// How a step's return aggregates the episode's rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnConvention {
    /// `G_i = r_i + γ·G_{i+1}`: the step's own reward counts.
    Inclusive,
    /// `G_i = Σ_{m>i} γ^{m-i-1}·r_m`: only rewards after the step count, so
    /// credit reaches an action exclusively through its consequences.
    Exclusive,
}

/// Training hyperparameters and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub episodes: usize,
    /// Step size α shared by the policy and value updates.
    pub step_size: f64,
    /// Discount γ.
    pub discount: f64,
    /// Candidate targets kept per source.
    pub candidates: usize,
    pub seed: u64,
    pub return_convention: ReturnConvention,
    /// Optional L2 cap on each step's policy gradient.
    pub clip_norm: Option<f64>,
    /// Track validation Hits@1 every 25 episodes and keep the best weights.
    pub early_stopping: bool,
    /// Ablation: freeze the mutual-exclusion input to zero.
    pub disable_mie: bool,
    /// Ablation: present candidates in uniformly shuffled order instead of
    /// sorted by similarity.
    pub random_env: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episodes: 500,
            step_size: 1e-3,
            discount: 0.9,
            candidates: 5,
            seed: 7,
            return_convention: ReturnConvention::Inclusive,
            clip_norm: None,
            early_stopping: false,
            disable_mie: false,
            random_env: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".to_string()));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::Config(format!(
                "step size must be positive and finite, got {}",
                self.step_size
            )));
        }
        if !self.discount.is_finite() || self.discount <= 0.0 || self.discount > 1.0 {
            return Err(Error::Config(format!(
                "discount must lie in (0, 1], got {}",
                self.discount
            )));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidate count must be positive".to_string()));
        }
        if let Some(c) = self.clip_norm {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip norm must be positive and finite, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything recorded about one decision during an episode.
#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub state: StateFeatures,
    pub forward: ForwardPass,
    pub outcome: StepOutcome,
}

/// One episode's decisions in order.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.outcome.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.reward).sum()
    }

    pub fn true_match_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.outcome.kind == Some(OutcomeKind::TrueMatch))
            .count()
    }
}

/// Discounted returns for each step under the chosen convention.
pub fn returns(rewards: &[f64], discount: f64, convention: ReturnConvention) -> Vec<f64> {
    let t = rewards.len();
    let mut inclusive = vec![0.0; t];
    let mut acc = 0.0;
    for i in (0..t).rev() {
        acc = rewards[i] + discount * acc;
        inclusive[i] = acc;
    }
    match convention {
        ReturnConvention::Inclusive => inclusive,
        ReturnConvention::Exclusive => {
            let mut shifted = vec![0.0; t];
            if t > 1 {
                shifted[..t - 1].copy_from_slice(&inclusive[1..]);
            }
            shifted
        }
    }
}

/// Roll the policy through one full episode of the (already reset)
/// environment, sampling actions from the policy distribution.
pub fn run_episode(
    policy: &Policy,
    env: &mut Environment,
    table: &CandidateTable,
    pair_enc: &EncodedPair,
    rng: &mut ChaCha12Rng,
) -> Result<EpisodeTrace> {
    let mut steps = Vec::new();
    while let Some(pair) = env.pop_state()? {
        let opponents: Vec<u32> = table
            .row(pair.source)
            .ok_or_else(|| Error::Protocol(format!("queued source {} missing from candidate table", pair.source)))?
            .iter()
            .map(|&(t, _)| t)
            .filter(|&t| t != pair.target)
            .collect();
        let state = policy.state_features(pair_enc, pair.source, pair.target, &opponents)?;
        let forward = policy.forward(&state);
        let action = forward.dist.sample(rng);
        let outcome = env.step(action)?;
        steps.push(EpisodeStep {
            state,
            forward,
            outcome,
        });
    }
    Ok(EpisodeTrace { steps })
}

/// Apply the policy-gradient and value updates for one finished episode.
///
/// All `∇ln π` terms are computed against the episode's frozen parameters
/// before any weight moves; the per-step deltas then apply sequentially,
/// each baseline read using the value head as updated by earlier steps.
pub fn reinforce_update(
    policy: &mut Policy,
    pair_enc: &EncodedPair,
    trace: &EpisodeTrace,
    config: &TrainerConfig,
) -> Result<()> {
    if trace.is_empty() {
        return Ok(());
    }
    let g = returns(&trace.rewards(), config.discount, config.return_convention);
    let mut grads = Vec::with_capacity(trace.len());
    for step in &trace.steps {
        let mut grad = policy.log_prob_grad(pair_enc, &step.state, &step.forward, step.outcome.action)?;
        if let Some(cap) = config.clip_norm {
            grad.clip_to_norm(cap);
        }
        grads.push(grad);
    }
    for (i, step) in trace.steps.iter().enumerate() {
        let delta = g[i] - policy.value_estimate(&step.state);
        let scale = config.step_size * config.discount.powi(i as i32) * delta;
        policy.apply_policy_step(&grads[i], scale)?;
        policy.apply_value_step(&step.state, g[i], config.step_size)?;
    }
    Ok(())
}

/// One metrics-log row per training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Correct matches made during the episode.
    pub alignment_count: usize,
    /// Decisions taken (skipped and dead pairs excluded).
    pub episode_length: usize,
    pub total_reward: f64,
    /// Mean skip probability over this episode's schedule queries (0 when
    /// the schedule was never consulted).
    pub mean_skip_rate: f64,
}

/// Render metrics rows as a CSV document (stable column order, shortest
/// round-trip float formatting, `\n` line endings).
pub fn metrics_csv(rows: &[EpisodeMetrics]) -> String {
    let mut out = String::from("episode,alignment_count,episode_length,total_reward,mean_skip_rate\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.episode, r.alignment_count, r.episode_length, r.total_reward, r.mean_skip_rate
        )
        .unwrap();
    }
    out
}

/// Validation snapshot kept by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub episode: usize,
    pub hits_at_1: f64,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy,
    pub metrics: Vec<EpisodeMetrics>,
    /// Present when early stopping ran: the episode whose weights were kept.
    pub best_validation: Option<ValidationPoint>,
}

/// Train a fresh policy on the seed alignments.
///
/// The candidate table is built over the seed pairs' sources and targets,
/// the environment is labeled by the seed pairs, and one environment episode
/// is one training episode. With `early_stopping` set and a validation set
/// given, validation Hits@1 is probed every 25 episodes and the
/// best-scoring weights are returned instead of the final ones.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &TrainerConfig,
    schedule: Schedule,
    false_mismatch_penalty: f64,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    space: &EmbeddingSpace,
    seeds: &AlignmentSet,
    validation: Option<&AlignmentSet>,
) -> Result<TrainOutput> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("training needs a non-empty seed alignment set".to_string()));
    }
    let table = build_candidates(space, &seeds.sources(), &seeds.targets(), config.candidates)?;
    let labels: BTreeMap<u32, u32> = seeds.pairs.iter().copied().collect();
    let order = if config.random_env {
        QueueOrder::Shuffled
    } else {
        QueueOrder::Sorted
    };
    let mut env = Environment::new(&table, &labels, schedule, false_mismatch_penalty, order, config.seed)?;

    let mut policy_config = PolicyConfig::new(space.dim, config.seed);
    policy_config.use_mie = !config.disable_mie;
    let mut policy = Policy::new(policy_config)?;
    let mut action_rng = component_rng(config.seed, "action-sampling");

    let mut validation_env = match validation {
        Some(truth) if config.early_stopping => {
            let vtable = build_candidates(space, &truth.sources(), &truth.targets(), config.candidates)?;
            let venv = eval_environment(&vtable, truth, config.seed)?;
            Some((vtable, venv, truth))
        }
        _ => None,
    };

    let mut metrics = Vec::with_capacity(config.episodes);
    let mut best: Option<(ValidationPoint, Policy)> = None;
    for episode in 1..=config.episodes {
        let pair_enc = policy.encode_pair(kg1, &space.e1, kg2, &space.e2)?;
        env.reset(episode, EnvMode::Train)?;
        let trace = run_episode(&policy, &mut env, &table, &pair_enc, &mut action_rng)?;
        let mean_skip_rate = env.mean_skip_rate();
        reinforce_update(&mut policy, &pair_enc, &trace, config)?;
        metrics.push(EpisodeMetrics {
            episode,
            alignment_count: trace.true_match_count(),
            episode_length: trace.len(),
            total_reward: trace.total_reward(),
            mean_skip_rate,
        });
        if episode % 25 == 0 {
            if let Some((vtable, venv, truth)) = validation_env.as_mut() {
                let result = rl_eval(&policy, venv, vtable, kg1, kg2, space, truth)?;
                let hits = result.metrics.hits_at_1;
                if best.as_ref().is_none_or(|(p, _)| hits > p.hits_at_1) {
                    best = Some((
                        ValidationPoint {
                            episode,
                            hits_at_1: hits,
                        },
                        policy.clone(),
                    ));
                }
            }
        }
    }
    let mut best_validation = None;
    if let Some((point, kept)) = best {
        best_validation = Some(point);
        policy = kept;
    }
    Ok(TrainOutput {
        policy,
        metrics,
        best_validation,
    })
}
