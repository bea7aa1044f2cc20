//! Seeded generator for confusable alignment tasks.
//!
//! Entities come in blocks whose embeddings sit close to a shared center,
//! with a within-block spread far smaller than the cross-graph noise. A
//! per-source nearest-neighbor rule then confuses block members, while the
//! two graphs stay genuinely alignable: the second graph is an isomorphic
//! copy (through a hidden bijection) with independently perturbed
//! embeddings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::kg::{AlignmentRole, AlignmentSet, KnowledgeGraph};
use crate::rng::component_rng;

/// Knobs for [`generate`]. `block_size = 1` turns the confusion off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    /// Entities per graph; must be a multiple of `block_size`.
    pub n_entities: usize,
    /// Entities sharing one embedding center.
    pub block_size: usize,
    pub dim: usize,
    /// Spread of block members around their center.
    pub intra_block_noise: f64,
    /// Noise between an entity's two embeddings across the graphs.
    pub alignment_noise: f64,
    /// Random chord edges added on top of the covering ring, per graph.
    pub extra_triples: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_entities: 30,
            block_size: 3,
            dim: 16,
            intra_block_noise: 0.01,
            alignment_noise: 0.05,
            extra_triples: 30,
            seed: 7,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 {
            return Err(Error::Config(format!(
                "synthetic task needs at least 2 entities, got {}",
                self.n_entities
            )));
        }
        if self.block_size == 0 || !self.n_entities.is_multiple_of(self.block_size) {
            return Err(Error::Config(format!(
                "block size {} must be positive and divide entity count {}",
                self.block_size, self.n_entities
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("synthetic embedding dim must be positive".to_string()));
        }
        for (name, v) in [
            ("intra_block_noise", self.intra_block_noise),
            ("alignment_noise", self.alignment_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// A fully in-memory alignment instance with known ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub space: EmbeddingSpace,
    /// The hidden bijection, as dense-id pairs.
    pub truth: AlignmentSet,
    pub params: SyntheticParams,
}

/// Build a task from `params`, fully determined by `params.seed`.
pub fn generate(params: &SyntheticParams) -> Result<SyntheticTask> {
    params.validate()?;
    let mut rng = component_rng(params.seed, "synthetic");
    let n = params.n_entities;
    let m = params.block_size;
    let dim = params.dim;

    // First graph's embeddings: block centers plus per-entity jitter.
    let mut e1 = Array2::zeros((n, dim));
    for block in 0..n / m {
        let center: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for i in block * m..(block + 1) * m {
            for (j, &c) in center.iter().enumerate() {
                e1[(i, j)] = c + params.intra_block_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    // Hidden bijection: source i corresponds to target index sigma[i].
    let mut sigma: Vec<usize> = (0..n).collect();
    sigma.shuffle(&mut rng);
    let mut e2 = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..dim {
            e2[(sigma[i], j)] = e1[(i, j)] + params.alignment_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }

    // Shared topology: a ring covers every entity, random chords thicken it.
    // The second graph mirrors each edge through the bijection, so the two
    // graphs are isomorphic and the GCN sees consistent structure.
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..params.extra_triples {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        if h != t {
            edges.push((h, t));
        }
    }
    let mut t1 = String::new();
    let mut t2 = String::new();
    for (k, &(h, t)) in edges.iter().enumerate() {
        let r = if k % 2 == 0 { "r0" } else { "r1" };
        writeln!(t1, "a{h}\t{r}\ta{t}").unwrap();
        writeln!(t2, "b{}\t{r}\tb{}", sigma[h], sigma[t]).unwrap();
    }
    let kg1 = KnowledgeGraph::parse(&t1, "synthetic-g1")?;
    let kg2 = KnowledgeGraph::parse(&t2, "synthetic-g2")?;

    // Rows above are indexed by construction order; re-key them by the dense
    // ids the parsers assigned.
    let mut m1 = Array2::zeros((n, dim));
    let mut m2 = Array2::zeros((n, dim));
    let mut pairs = Vec::with_capacity(n);
    for (i, &si) in sigma.iter().enumerate() {
        let s = kg1.entities.get(&format!("a{i}")).unwrap();
        let t = kg2.entities.get(&format!("b{si}")).unwrap();
        m1.row_mut(s as usize).assign(&e1.row(i));
        m2.row_mut(t as usize).assign(&e2.row(si));
        pairs.push((s, t));
    }
    let space = EmbeddingSpace::new(m1, m2, &kg1, &kg2)?;
    let truth = AlignmentSet {
        pairs,
        role: AlignmentRole::Test,
    };
    Ok(SyntheticTask {
        kg1,
        kg2,
        space,
        truth,
        params: *params,
    })
}

/// Where [`write_dataset`] put each file.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub kg1: PathBuf,
    pub kg2: PathBuf,
    pub emb1: PathBuf,
    pub emb2: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn embedding_lines(kg: &KnowledgeGraph, matrix: &Array2<f64>) -> String {
    let mut out = format!("{} {}\n", matrix.nrows(), matrix.ncols());
    for id in 0..matrix.nrows() {
        out.push_str(kg.entities.name(id as u32).unwrap());
        for v in matrix.row(id) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Write the task in the on-disk formats the loaders understand. Alignment
/// partitions are split by whole blocks (roughly 60/20/20) so confusable
/// groups never straddle a partition; tasks with fewer than three blocks put
/// the full bijection in every partition.
pub fn write_dataset(task: &SyntheticTask, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths {
        kg1: dir.join("rel_triples_1"),
        kg2: dir.join("rel_triples_2"),
        emb1: dir.join("emb_1.txt"),
        emb2: dir.join("emb_2.txt"),
        train: dir.join("ent_links_train"),
        valid: dir.join("ent_links_valid"),
        test: dir.join("ent_links_test"),
    };
    write_file(&paths.kg1, &task.kg1.to_triple_lines())?;
    write_file(&paths.kg2, &task.kg2.to_triple_lines())?;
    write_file(&paths.emb1, &embedding_lines(&task.kg1, &task.space.e1))?;
    write_file(&paths.emb2, &embedding_lines(&task.kg2, &task.space.e2))?;

    let m = task.params.block_size;
    let blocks = task.params.n_entities / m;
    let subset = |block_range: std::ops::Range<usize>| AlignmentSet {
        pairs: task.truth.pairs[block_range.start * m..block_range.end * m].to_vec(),
        role: AlignmentRole::TrainSeed,
    };
    let (train, valid, test) = if blocks >= 3 {
        let test_b = (blocks / 5).max(1);
        let valid_b = (blocks / 5).max(1);
        let train_b = blocks - valid_b - test_b;
        (
            subset(0..train_b),
            subset(train_b..train_b + valid_b),
            subset(train_b + valid_b..blocks),
        )
    } else {
        (task.truth.clone(), task.truth.clone(), task.truth.clone())
    };
    write_file(&paths.train, &train.to_link_lines(&task.kg1, &task.kg2))?;
    write_file(&paths.valid, &valid.to_link_lines(&task.kg1, &task.kg2))?;
    write_file(&paths.test, &test.to_link_lines(&task.kg1, &task.kg2))?;
    Ok(paths)
}
