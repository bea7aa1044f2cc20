//! The sequencing environment: a similarity-ordered queue of candidate
//! pairs with 1-to-1 exclusion on matches, per-episode random skipping
//! scheduled by pair difficulty, and the reward table.
//!
//! One environment instance owns the full pair set (difficulties normalized
//! once at construction) and is re-`reset` for every episode; `pop_state`
//! and `step` must alternate strictly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::CandidateTable;
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::rng::component_rng;

/// Curriculum schedule: skip probability `max(skip_min, decay^(t−1) ·
/// skip_base · d)` for episode `t` and normalized difficulty `d`, with `tau`
/// the neutral similarity level in the difficulty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub skip_base: f64,
    pub skip_min: f64,
    pub decay: f64,
    pub tau: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            skip_base: 0.5,
            skip_min: 0.05,
            decay: 0.995,
            tau: 0.5,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("skip_base", self.skip_base),
            ("skip_min", self.skip_min),
            ("decay", self.decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("schedule {name} must lie in [0, 1], got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "schedule tau must lie in [-1, 1] (it is compared against cosines), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// One queued state: a source entity, one of its nearest targets, their
/// similarity, the training label when known, and the normalized difficulty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub source: u32,
    pub target: u32,
    pub similarity: f64,
    /// `Some(true)` iff this is the source's ground-truth target; `None`
    /// outside the labeled partition.
    pub label: Option<bool>,
    /// Normalized to [0, 1] over the environment's full pair set.
    pub difficulty: f64,
}

/// Raw difficulty of a labeled pair: easy positives sit at their row head,
/// easy negatives sit far below it.
pub fn difficulty(pair: &CandidatePair, row_max_similarity: f64, tau: f64) -> Result<f64> {
    let Some(label) = pair.label else {
        return Err(Error::Protocol(format!(
            "difficulty of unlabeled pair ({}, {}) requested (difficulty is train-only)",
            pair.source, pair.target
        )));
    };
    let l = if label { 1.0 } else { 0.0 };
    Ok(l * (row_max_similarity - pair.similarity)
        + (1.0 - l) * (tau - row_max_similarity + pair.similarity))
}

/// Min-max rescale to [0, 1]; a constant input maps to all 0.5.
pub fn normalize_difficulties(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= f64::EPSILON * min.abs().max(max.abs()).max(1.0) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|&d| (d - min) / range).collect()
}

/// Skip probability for episode `t` (1-based) and normalized difficulty `d`.
pub fn skip_rate(schedule: &Schedule, t: usize, d: f64) -> f64 {
    debug_assert!(t >= 1, "episode index is 1-based");
    let decayed = schedule.decay.powi(t as i32 - 1) * schedule.skip_base * d;
    schedule.skip_min.max(decayed)
}

/// Queue order: canonical similarity sort, or uniform shuffling per episode
/// (the curriculum-free ablation, which never consults the schedule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueOrder {
    Sorted,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvMode {
    Train,
    Eval,
}

/// The four (action, label) outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    TrueMatch,
    FalseMatch,
    TrueMismatch,
    FalseMismatch,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::TrueMatch => "true-match",
            OutcomeKind::FalseMatch => "false-match",
            OutcomeKind::TrueMismatch => "true-mismatch",
            OutcomeKind::FalseMismatch => "false-mismatch",
        }
    }
}

/// What one `step` produced; `kind` is absent for unlabeled pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pair: CandidatePair,
    pub action: Action,
    pub reward: f64,
    pub kind: Option<OutcomeKind>,
    pub step_index: usize,
}

/// JSON-lines record of one step, for trace export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub source: u32,
    pub target: u32,
    pub similarity: f64,
    pub label: Option<u8>,
    pub action: u8,
    pub reward: f64,
    pub kind: Option<String>,
    pub step_index: usize,
}

impl From<&StepOutcome> for StepRecord {
    fn from(s: &StepOutcome) -> Self {
        StepRecord {
            source: s.pair.source,
            target: s.pair.target,
            similarity: s.pair.similarity,
            label: s.pair.label.map(u8::from),
            action: s.action.as_bit(),
            reward: s.reward,
            kind: s.kind.map(|k| k.as_str().to_string()),
            step_index: s.step_index,
        }
    }
}

/// Serialize an episode's steps as JSON-lines (one record per line).
pub fn trace_to_jsonl(steps: &[StepOutcome]) -> String {
    let mut out = String::new();
    for step in steps {
        out.push_str(&serde_json::to_string(&StepRecord::from(step)).unwrap());
        out.push('\n');
    }
    out
}

/// The environment. Holds the immutable pair set plus per-episode state.
#[derive(Debug, Clone)]
pub struct Environment {
    pairs: Vec<CandidatePair>,
    schedule: Schedule,
    false_mismatch_penalty: f64,
    order: QueueOrder,
    rng: ChaCha12Rng,
    // Per-episode state.
    queue: VecDeque<usize>,
    alive_sources: BTreeSet<u32>,
    alive_targets: BTreeSet<u32>,
    episode_index: usize,
    step_index: usize,
    mode: EnvMode,
    pending: Option<usize>,
    matches: Vec<(u32, u32)>,
    active: bool,
    schedule_queries: u64,
    skip_rate_sum: f64,
    skip_rate_count: u64,
}

impl Environment {
    /// Build the full pair set from a candidate table. `labels` maps each
    /// labeled source to its ground-truth target; difficulties are computed
    /// for labeled pairs and min-max normalized once, here.
    pub fn new(
        table: &CandidateTable,
        labels: &BTreeMap<u32, u32>,
        schedule: Schedule,
        false_mismatch_penalty: f64,
        order: QueueOrder,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        if !false_mismatch_penalty.is_finite() {
            return Err(Error::Config("false-mismatch penalty must be finite".to_string()));
        }
        let mut pairs = Vec::with_capacity(table.total_pairs());
        for source in table.sources() {
            let row = table.row(source).unwrap();
            let row_max = row.first().map(|&(_, s)| s).unwrap_or(0.0);
            for &(target, similarity) in row {
                let label = labels.get(&source).map(|&truth| truth == target);
                let mut pair = CandidatePair {
                    source,
                    target,
                    similarity,
                    label,
                    difficulty: 0.5,
                };
                if label.is_some() {
                    // Stash the raw score; normalized below.
                    pair.difficulty = difficulty(&pair, row_max, schedule.tau)?;
                }
                pairs.push(pair);
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config("candidate table contains no pairs".to_string()));
        }
        let labeled: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].label.is_some()).collect();
        let raw: Vec<f64> = labeled.iter().map(|&i| pairs[i].difficulty).collect();
        for (&i, d) in labeled.iter().zip(normalize_difficulties(&raw)) {
            pairs[i].difficulty = d;
        }
        // Canonical order: similarity descending, ties by source then target.
        pairs.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap()
                .then(a.source.cmp(&b.source))
                .then(a.target.cmp(&b.target))
        });
        Ok(Environment {
            pairs,
            schedule,
            false_mismatch_penalty,
            order,
            rng: component_rng(seed, "environment"),
            queue: VecDeque::new(),
            alive_sources: BTreeSet::new(),
            alive_targets: BTreeSet::new(),
            episode_index: 0,
            step_index: 0,
            mode: EnvMode::Train,
            pending: None,
            matches: Vec::new(),
            active: false,
            schedule_queries: 0,
            skip_rate_sum: 0.0,
            skip_rate_count: 0,
        })
    }

    /// Start episode `episode_index` (1-based). Rebuilds the queue — pairs
    /// skipped or left unplayed in earlier episodes all return.
    pub fn reset(&mut self, episode_index: usize, mode: EnvMode) -> Result<()> {
        if episode_index < 1 {
            return Err(Error::Protocol("episode index is 1-based".to_string()));
        }
        let mut indices: Vec<usize> = (0..self.pairs.len()).collect();
        if self.order == QueueOrder::Shuffled {
            indices.shuffle(&mut self.rng);
        }
        self.queue = indices.into();
        self.alive_sources = self.pairs.iter().map(|p| p.source).collect();
        self.alive_targets = self.pairs.iter().map(|p| p.target).collect();
        self.episode_index = episode_index;
        self.step_index = 0;
        self.mode = mode;
        self.pending = None;
        self.matches.clear();
        self.active = true;
        self.skip_rate_sum = 0.0;
        self.skip_rate_count = 0;
        Ok(())
    }

    /// Emit the next live, non-skipped pair, or `None` at episode end (queue
    /// exhausted or every source matched). Dead pairs — those holding an
    /// already-matched entity — are dropped without a skip draw; skipping
    /// applies only in sorted-order training episodes.
    pub fn pop_state(&mut self) -> Result<Option<CandidatePair>> {
        if !self.active {
            return Err(Error::Protocol("pop_state before reset".to_string()));
        }
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "pop_state called while a state awaits its step".to_string(),
            ));
        }
        loop {
            if self.alive_sources.is_empty() {
                return Ok(None);
            }
            let Some(idx) = self.queue.pop_front() else {
                return Ok(None);
            };
            let pair = self.pairs[idx];
            if !self.alive_sources.contains(&pair.source) || !self.alive_targets.contains(&pair.target) {
                continue;
            }
            if self.mode == EnvMode::Train && self.order == QueueOrder::Sorted {
                let p = skip_rate(&self.schedule, self.episode_index, pair.difficulty);
                self.schedule_queries += 1;
                self.skip_rate_sum += p;
                self.skip_rate_count += 1;
                if self.rng.random::<f64>() < p {
                    continue;
                }
            }
            self.step_index += 1;
            self.pending = Some(idx);
            return Ok(Some(pair));
        }
    }

    /// Apply `action` to the pair emitted by the latest `pop_state`. A match
    /// excludes both entities (right or wrong); a mismatch leaves them alive
    /// and only consumes the pair.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let idx = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("step without a pending state".to_string()))?;
        let pair = self.pairs[idx];
        let (reward, kind) = match (action, pair.label) {
            (Action::Match, Some(true)) => (1.0, Some(OutcomeKind::TrueMatch)),
            (Action::Match, Some(false)) => (0.0, Some(OutcomeKind::FalseMatch)),
            (Action::Mismatch, Some(true)) => (self.false_mismatch_penalty, Some(OutcomeKind::FalseMismatch)),
            (Action::Mismatch, Some(false)) => (0.0, Some(OutcomeKind::TrueMismatch)),
            (_, None) => (0.0, None),
        };
        if action == Action::Match {
            self.alive_sources.remove(&pair.source);
            self.alive_targets.remove(&pair.target);
            self.matches.push((pair.source, pair.target));
        }
        Ok(StepOutcome {
            pair,
            action,
            reward,
            kind,
            step_index: self.step_index,
        })
    }

    /// Matches accepted so far this episode, in acceptance order.
    pub fn matches(&self) -> &[(u32, u32)] {
        &self.matches
    }

    /// States emitted so far this episode (the episode length once it ends).
    pub fn step_count(&self) -> usize {
        self.step_index
    }

    /// Total number of pairs a fresh episode starts with.
    pub fn initial_queue_len(&self) -> usize {
        self.pairs.len()
    }

    /// The full pair set in canonical order.
    pub fn pairs(&self) -> &[CandidatePair] {
        &self.pairs
    }

    /// How many times the skip schedule has ever been consulted.
    pub fn schedule_queries(&self) -> u64 {
        self.schedule_queries
    }

    /// Mean consulted skip rate this episode (0 when never consulted).
    pub fn mean_skip_rate(&self) -> f64 {
        if self.skip_rate_count == 0 {
            0.0
        } else {
            self.skip_rate_sum / self.skip_rate_count as f64
        }
    }
}
