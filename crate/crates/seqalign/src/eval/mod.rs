//! Evaluation: nearest-neighbor ranking, sequential threshold matching with
//! exclusion, greedy policy rollout, alignment metrics, and an exhaustive
//! optimal-assignment oracle for small instances.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{CandidateTable, EmbeddingSpace};
use crate::env::{EnvMode, Environment};
use crate::error::{Error, Result};
use crate::kg::{AlignmentSet, KnowledgeGraph};
use crate::policy::Policy;

/// Which decision rule produced an [`AlignmentResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Independent per-source nearest neighbor (duplicates allowed).
    Ranking,
    /// Similarity-ordered sequential matching with exclusion.
    Seq,
    /// Greedy rollout of a trained policy in the eval environment.
    Rl,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ranking => "ranking",
            Strategy::Seq => "seq",
            Strategy::Rl => "rl",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranking" => Ok(Strategy::Ranking),
            "seq" => Ok(Strategy::Seq),
            "rl" => Ok(Strategy::Rl),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected ranking, seq, or rl)"
            ))),
        }
    }
}

/// Standard alignment quality numbers over a ground-truth pair set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits_at_1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One strategy's proposed matches and their quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub strategy: Strategy,
    pub matches: Vec<(u32, u32)>,
    pub metrics: Metrics,
}

/// Score proposed matches against ground truth. Hits@1 counts correct
/// matches over the truth size (so it equals recall and is comparable
/// across strategies regardless of how many pairs each proposes).
pub fn metrics(matches: &[(u32, u32)], truth: &AlignmentSet) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::Config("metrics need a non-empty ground-truth set".to_string()));
    }
    let truth_set: BTreeSet<(u32, u32)> = truth.pairs.iter().copied().collect();
    let correct = matches.iter().filter(|p| truth_set.contains(p)).count();
    let hits_at_1 = correct as f64 / truth.len() as f64;
    let precision = if matches.is_empty() {
        0.0
    } else {
        correct as f64 / matches.len() as f64
    };
    let recall = hits_at_1;
    // Harmonic mean of precision and recall in the exact integer form
    // 2·TP / (2·TP + FP + FN); the denominator is positive because truth is.
    let f1 = 2.0 * correct as f64 / (matches.len() + truth.len()) as f64;
    Ok(Metrics {
        hits_at_1,
        precision,
        recall,
        f1,
    })
}

/// Match every source to its row head (most similar candidate). Several
/// sources may claim the same target — that collision is the point of the
/// sequential strategies.
pub fn rank_eval(table: &CandidateTable, truth: &AlignmentSet) -> Result<AlignmentResult> {
    let mut matches = Vec::with_capacity(table.num_rows());
    for source in table.sources() {
        let row = table.row(source).unwrap();
        if let Some(&(target, _)) = row.first() {
            matches.push((source, target));
        }
    }
    Ok(AlignmentResult {
        strategy: Strategy::Ranking,
        metrics: metrics(&matches, truth)?,
        matches,
    })
}

/// Walk all candidate pairs in descending-similarity order with 1-to-1
/// exclusion: a pair above `threshold` matches outright, anything else
/// matches with probability `max(similarity, 0)`.
pub fn seq_eval(
    table: &CandidateTable,
    truth: &AlignmentSet,
    threshold: f64,
    rng: &mut ChaCha12Rng,
) -> Result<AlignmentResult> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "seq threshold must lie in [-1, 1], got {threshold}"
        )));
    }
    let mut pairs: Vec<(u32, u32, f64)> = Vec::with_capacity(table.total_pairs());
    for source in table.sources() {
        for &(target, similarity) in table.row(source).unwrap() {
            pairs.push((source, target, similarity));
        }
    }
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut used_sources = BTreeSet::new();
    let mut used_targets = BTreeSet::new();
    let mut matches = Vec::new();
    for (source, target, similarity) in pairs {
        if used_sources.contains(&source) || used_targets.contains(&target) {
            continue;
        }
        let matched = similarity > threshold || rng.random::<f64>() < similarity.max(0.0);
        if matched {
            used_sources.insert(source);
            used_targets.insert(target);
            matches.push((source, target));
        }
    }
    Ok(AlignmentResult {
        strategy: Strategy::Seq,
        metrics: metrics(&matches, truth)?,
        matches,
    })
}

/// One deterministic eval episode: skipping disabled, actions greedy.
/// Labels inside the environment are used only for trace records; scoring
/// happens against `truth` afterwards.
pub fn rl_eval(
    policy: &Policy,
    env: &mut Environment,
    table: &CandidateTable,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    space: &EmbeddingSpace,
    truth: &AlignmentSet,
) -> Result<AlignmentResult> {
    if policy.config.dim != space.dim {
        return Err(Error::DimensionMismatch {
            dim: policy.config.dim,
            hidden: policy.config.hidden,
            layers: policy.config.layers,
            expected: space.dim,
        });
    }
    let pair_enc = policy.encode_pair(kg1, &space.e1, kg2, &space.e2)?;
    env.reset(1, EnvMode::Eval)?;
    while let Some(pair) = env.pop_state()? {
        let opponents: Vec<u32> = table
            .row(pair.source)
            .unwrap()
            .iter()
            .map(|&(t, _)| t)
            .filter(|&t| t != pair.target)
            .collect();
        let state = policy.state_features(&pair_enc, pair.source, pair.target, &opponents)?;
        let action = policy.forward(&state).dist.greedy();
        env.step(action)?;
    }
    let matches = env.matches().to_vec();
    Ok(AlignmentResult {
        strategy: Strategy::Rl,
        metrics: metrics(&matches, truth)?,
        matches,
    })
}

/// Build an eval environment over `table` labeled by `truth`.
pub fn eval_environment(table: &CandidateTable, truth: &AlignmentSet, seed: u64) -> Result<Environment> {
    let labels: BTreeMap<u32, u32> = truth.pairs.iter().copied().collect();
    Environment::new(
        table,
        &labels,
        crate::env::Schedule::default(),
        -10.0,
        crate::env::QueueOrder::Sorted,
        seed,
    )
}

/// Exhaustive search over injective assignments of the smaller side,
/// maximizing the number of ground-truth pairs (ties broken by total
/// similarity, then lexicographically). Refuses matrices whose smaller side
/// exceeds 8 — the enumeration is factorial.
pub fn optimal_assignment_oracle(
    similarity: &Array2<f64>,
    truth: &[(usize, usize)],
) -> Result<(Vec<(usize, usize)>, usize)> {
    let (rows, cols) = (similarity.nrows(), similarity.ncols());
    if rows == 0 || cols == 0 {
        return Err(Error::Config("assignment oracle needs a non-empty matrix".to_string()));
    }
    if rows.min(cols) > 8 {
        return Err(Error::OracleTooLarge { max: 8, rows, cols });
    }
    let transposed = rows > cols;
    let sim = if transposed {
        similarity.t().to_owned()
    } else {
        similarity.to_owned()
    };
    let truth_set: BTreeSet<(usize, usize)> = truth
        .iter()
        .map(|&(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();

    struct Search<'a> {
        sim: &'a Array2<f64>,
        truth: &'a BTreeSet<(usize, usize)>,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(usize, f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn run(&mut self, row: usize, correct: usize, total: f64) {
            if row == self.sim.nrows() {
                let better = match &self.best {
                    None => true,
                    Some((bc, bt, _)) => correct > *bc || (correct == *bc && total > *bt),
                };
                if better {
                    self.best = Some((correct, total, self.current.clone()));
                }
                return;
            }
            for col in 0..self.sim.ncols() {
                if self.used[col] {
                    continue;
                }
                self.used[col] = true;
                self.current.push(col);
                let hit = usize::from(self.truth.contains(&(row, col)));
                self.run(row + 1, correct + hit, total + self.sim[(row, col)]);
                self.current.pop();
                self.used[col] = false;
            }
        }
    }

    let mut search = Search {
        sim: &sim,
        truth: &truth_set,
        used: vec![false; sim.ncols()],
        current: Vec::new(),
        best: None,
    };
    search.run(0, 0, 0.0);
    let (correct, _, cols_chosen) = search.best.unwrap();
    let pairs = cols_chosen
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    Ok((pairs, correct))
}
