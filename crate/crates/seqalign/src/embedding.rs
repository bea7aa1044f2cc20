//! Entity embeddings, projection, cosine similarity, and k-nearest
//! candidate tables.
//!
//! Two interchangeable on-disk formats:
//! - text: header `<count> <dim>`, then `<entity_id> <f1> ... <f_dim>`;
//! - binary sidecar: an id list (one external id per line) next to a
//!   little-endian float32 row-major matrix.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

/// The two KGs' entity embeddings in a shared space.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub e1: Array2<f64>,
    pub e2: Array2<f64>,
}

impl EmbeddingSpace {
    /// Wrap pre-built matrices, checking row counts and finiteness.
    pub fn new(e1: Array2<f64>, e2: Array2<f64>, g1: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<Self> {
        if e1.nrows() != g1.num_entities() || e2.nrows() != g2.num_entities() {
            return Err(Error::ShapeMismatch {
                context: "embedding space".to_string(),
                details: format!(
                    "matrix rows ({}, {}) vs entity counts ({}, {})",
                    e1.nrows(),
                    e2.nrows(),
                    g1.num_entities(),
                    g2.num_entities()
                ),
            });
        }
        if e1.ncols() != e2.ncols() {
            return Err(Error::ShapeMismatch {
                context: "embedding space".to_string(),
                details: format!("dims {} vs {}", e1.ncols(), e2.ncols()),
            });
        }
        for (name, m) in [("e1", &e1), ("e2", &e2)] {
            if let Some((i, _)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("embedding matrix {name}"),
                    location: format!("flat index {i}"),
                });
            }
        }
        let dim = e1.ncols();
        Ok(EmbeddingSpace { dim, e1, e2 })
    }
}

/// Parse the text embedding format against a KG's entity registry.
/// The returned matrix is indexed by dense entity id.
pub fn parse_embeddings_text(text: &str, origin: &str, kg: &KnowledgeGraph) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyInput {
        path: origin.to_string(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(Error::MalformedLine {
            path: origin.to_string(),
            line: 1,
            expected: 2,
            found: head.len(),
        });
    }
    let count: usize = head[0].parse().map_err(|_| Error::Config(format!("{origin}: bad count in header")))?;
    let dim: usize = head[1].parse().map_err(|_| Error::Config(format!("{origin}: bad dim in header")))?;

    let mut matrix = Array2::from_elem((kg.num_entities(), dim), f64::NAN);
    let mut filled = vec![false; kg.num_entities()];
    let mut rows = 0usize;
    for (lineno, line) in lines {
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap();
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::LengthMismatch {
                context: format!("{origin}:{} vector for '{name}'", lineno + 1),
                expected: dim,
                found: values.len(),
            });
        }
        rows += 1;
        // Ids not present in the KG are tolerated: dumps may cover a superset.
        let Some(id) = kg.entities.get(name) else {
            continue;
        };
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v.parse().map_err(|_| Error::NonFinite {
                context: format!("{origin}:{}", lineno + 1),
                location: format!("column {j}"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{origin}:{}", lineno + 1),
                    location: format!("column {j}"),
                });
            }
            matrix[(id as usize, j)] = x;
        }
        filled[id as usize] = true;
    }
    if rows != count {
        return Err(Error::LengthMismatch {
            context: format!("{origin}: header row count"),
            expected: count,
            found: rows,
        });
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(Error::MissingEmbedding {
            name: kg.entities.name(missing as u32).unwrap().to_string(),
            path: origin.to_string(),
        });
    }
    Ok(matrix)
}

pub fn load_embeddings_text(path: &Path, kg: &KnowledgeGraph) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings_text(&text, &path.display().to_string(), kg)
}

/// Load the binary sidecar format: `ids_path` lists external ids (one per
/// line, dump row order), `matrix_path` holds little-endian f32, row-major.
pub fn load_embeddings_binary(ids_path: &Path, matrix_path: &Path, kg: &KnowledgeGraph) -> Result<Array2<f64>> {
    let ids_text = fs::read_to_string(ids_path).map_err(|e| Error::io(ids_path, e))?;
    let ids: Vec<&str> = ids_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput {
            path: ids_path.display().to_string(),
        });
    }
    let bytes = fs::read(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    if bytes.len() % 4 != 0 || (bytes.len() / 4) % ids.len() != 0 {
        return Err(Error::ShapeMismatch {
            context: format!("binary embeddings {}", matrix_path.display()),
            details: format!("{} bytes not a float32 multiple of {} rows", bytes.len(), ids.len()),
        });
    }
    let dim = bytes.len() / 4 / ids.len();
    let mut matrix = Array2::from_elem((kg.num_entities(), dim), f64::NAN);
    let mut filled = vec![false; kg.num_entities()];
    for (row, name) in ids.iter().enumerate() {
        let Some(id) = kg.entities.get(name) else {
            continue;
        };
        for j in 0..dim {
            let off = (row * dim + j) * 4;
            let x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("binary embeddings {}", matrix_path.display()),
                    location: format!("row {row} column {j}"),
                });
            }
            matrix[(id as usize, j)] = x;
        }
        filled[id as usize] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(Error::MissingEmbedding {
            name: kg.entities.name(missing as u32).unwrap().to_string(),
            path: matrix_path.display().to_string(),
        });
    }
    Ok(matrix)
}

/// Parse a plain text matrix: header `<rows> <cols>`, then rows of floats.
pub fn parse_matrix_text(text: &str, origin: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::EmptyInput {
        path: origin.to_string(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(Error::Config(format!("{origin}: matrix header must be '<rows> <cols>'")));
    }
    let rows: usize = head[0].parse().map_err(|_| Error::Config(format!("{origin}: bad row count")))?;
    let cols: usize = head[1].parse().map_err(|_| Error::Config(format!("{origin}: bad col count")))?;
    let mut matrix = Array2::zeros((rows, cols));
    let mut r = 0usize;
    for line in lines {
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(Error::LengthMismatch {
                context: format!("{origin} matrix row {r}"),
                expected: cols,
                found: values.len(),
            });
        }
        if r >= rows {
            return Err(Error::LengthMismatch {
                context: format!("{origin} matrix rows"),
                expected: rows,
                found: r + 1,
            });
        }
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::NonFinite {
                    context: origin.to_string(),
                    location: format!("row {r} column {j}"),
                })?;
            matrix[(r, j)] = x;
        }
        r += 1;
    }
    if r != rows {
        return Err(Error::LengthMismatch {
            context: format!("{origin} matrix rows"),
            expected: rows,
            found: r,
        });
    }
    Ok(matrix)
}

pub fn load_matrix_text(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_text(&text, &path.display().to_string())
}

/// Right-multiply each row of `e2_raw` by `m`, leaving the input unmodified.
pub fn apply_projection(e2_raw: &Array2<f64>, m: &Array2<f64>) -> Result<Array2<f64>> {
    if m.nrows() != m.ncols() || m.nrows() != e2_raw.ncols() {
        return Err(Error::ShapeMismatch {
            context: "projection".to_string(),
            details: format!("matrix {}x{} vs dim {}", m.nrows(), m.ncols(), e2_raw.ncols()),
        });
    }
    Ok(e2_raw.dot(m))
}

/// Cosine similarity, clamped to [-1, 1]. Errors on a zero-norm input.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Per-source candidate rows: the k highest-cosine targets, sorted
/// descending, ties broken by ascending target id.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    pub k: usize,
    rows: Vec<(u32, Vec<(u32, f64)>)>,
    index: std::collections::HashMap<u32, usize>,
}

impl CandidateTable {
    pub fn sources(&self) -> impl Iterator<Item = u32> + '_ {
        self.rows.iter().map(|&(s, _)| s)
    }

    pub fn row(&self, source: u32) -> Option<&[(u32, f64)]> {
        self.index.get(&source).map(|&i| self.rows[i].1.as_slice())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Similarity of the row head (the most similar candidate) for `source`.
    pub fn row_max_similarity(&self, source: u32) -> Option<f64> {
        self.row(source).and_then(|r| r.first()).map(|&(_, s)| s)
    }

    pub fn total_pairs(&self) -> usize {
        self.rows.iter().map(|(_, r)| r.len()).sum()
    }
}

/// Exact k-NN by cosine over the supplied target pool. Sources are scanned
/// in parallel; rows are merged back in source order so results are
/// deterministic.
pub fn build_candidates(
    space: &EmbeddingSpace,
    sources: &[u32],
    targets: &[u32],
    k: usize,
) -> Result<CandidateTable> {
    if k < 1 {
        return Err(Error::Config("candidate count k must be >= 1".to_string()));
    }
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::Config("candidate build needs non-empty sources and targets".to_string()));
    }
    let rows: Vec<(u32, Vec<(u32, f64)>)> = sources
        .par_iter()
        .map(|&s| {
            let u = space.e1.row(s as usize);
            let mut sims: Vec<(u32, f64)> = targets
                .iter()
                .map(|&t| {
                    let sim = cosine(u, space.e2.row(t as usize))?;
                    Ok((t, sim))
                })
                .collect::<Result<_>>()?;
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            sims.truncate(k.min(targets.len()));
            Ok((s, sims))
        })
        .collect::<Result<_>>()?;
    let index = rows.iter().enumerate().map(|(i, &(s, _))| (s, i)).collect();
    Ok(CandidateTable { k, rows, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn kg_with(n: usize) -> KnowledgeGraph {
        let mut text = String::new();
        for i in 0..n {
            text.push_str(&format!("e{i}\tr\te{}\n", (i + 1) % n));
        }
        KnowledgeGraph::parse(&text, "test").unwrap()
    }

    #[test]
    fn text_embeddings_load() {
        let kg = kg_with(3);
        let text = "3 4\ne0 0 1 2 3\ne1 1 1 1 1\ne2 -1 0 0 2\n";
        let m = parse_embeddings_text(text, "emb", &kg).unwrap();
        assert_eq!(m.shape(), &[3, 4]);
        assert_eq!(m[(2, 3)], 2.0);
    }

    #[test]
    fn mixed_vector_lengths_rejected() {
        let kg = kg_with(2);
        let text = "2 4\ne0 0 1 2 3\ne1 1 1 1 1 5\n";
        assert!(parse_embeddings_text(text, "emb", &kg).is_err());
    }

    #[test]
    fn missing_entity_named_in_error() {
        let kg = kg_with(3);
        let text = "2 2\ne0 0 1\ne1 1 1\n";
        let err = parse_embeddings_text(text, "emb", &kg).unwrap_err();
        assert!(err.to_string().contains("e2"), "{err}");
    }

    #[test]
    fn non_finite_value_rejected() {
        let kg = kg_with(2);
        let text = "2 2\ne0 0 1\ne1 nan 1\n";
        assert!(parse_embeddings_text(text, "emb", &kg).is_err());
    }

    #[test]
    fn binary_sidecar_round_trips_with_text() {
        let kg = kg_with(3);
        let dir = tempfile::tempdir().unwrap();
        let ids = dir.path().join("emb.ids");
        let bin = dir.path().join("emb.bin");
        std::fs::write(&ids, "e0\ne1\ne2\n").unwrap();
        let values: Vec<f32> = vec![0.5, -1.25, 3.0, 0.0, 7.5, 2.5];
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bytes).unwrap();
        let m = load_embeddings_binary(&ids, &bin, &kg).unwrap();
        assert_eq!(m.shape(), &[3, 2]);
        assert_eq!(m[(1, 1)], 0.0);
        assert_eq!(m[(2, 0)], 7.5);
    }

    #[test]
    fn projection_identity_is_noop() {
        let e2 = array![[1.0, 2.0], [3.0, 4.0]];
        let id = Array2::eye(2);
        assert_eq!(apply_projection(&e2, &id).unwrap(), e2);
    }

    #[test]
    fn projection_permutes() {
        let e2 = array![[1.0, 0.0]];
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(apply_projection(&e2, &m).unwrap(), array![[0.0, 1.0]]);
    }

    #[test]
    fn projection_matches_naive_matmul() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let e2 = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let m = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let out = apply_projection(&e2, &m).unwrap();
        // Oracle: triple-loop matmul.
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for l in 0..3 {
                    acc += e2[(i, l)] * m[(l, j)];
                }
                assert!((out[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_shape_mismatch_rejected() {
        let e2 = array![[1.0, 2.0]];
        let m = Array2::<f64>::eye(3);
        assert!(apply_projection(&e2, &m).is_err());
    }

    #[test]
    fn cosine_of_self_is_one() {
        let v = array![0.3, -2.0, 5.0];
        assert!((cosine(v.view(), v.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let u = array![1.0, 0.0];
        let v = array![0.0, 1.0];
        assert_eq!(cosine(u.view(), v.view()).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_computed_case() {
        let u = array![1.0, 2.0, 3.0];
        let v = array![4.0, 5.0, 6.0];
        // dot = 32, |u| = sqrt(14), |v| = sqrt(77)
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine(u.view(), v.view()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974631846).abs() < 1e-9);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let u = array![0.0, 0.0];
        let v = array![1.0, 0.0];
        assert!(cosine(u.view(), v.view()).is_err());
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            let u = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0) + 0.01);
            let v = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0) + 0.01);
            let a: f64 = rng.random_range(0.1..5.0);
            let b: f64 = rng.random_range(0.1..5.0);
            let c1 = cosine(u.view(), v.view()).unwrap();
            let c2 = cosine(v.view(), u.view()).unwrap();
            let c3 = cosine((&u * a).view(), (&v * b).view()).unwrap();
            assert!((c1 - c2).abs() < 1e-12);
            assert!((c1 - c3).abs() < 1e-10);
            assert!((-1.0..=1.0).contains(&c1));
        }
    }

    fn space_from(e1: Array2<f64>, e2: Array2<f64>) -> EmbeddingSpace {
        let dim = e1.ncols();
        EmbeddingSpace { dim, e1, e2 }
    }

    #[test]
    fn identical_vector_ranks_first_with_sim_one() {
        let e1 = array![[1.0, 1.0]];
        let e2 = array![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        let table = build_candidates(&space_from(e1, e2), &[0], &[0, 1, 2], 1).unwrap();
        let row = table.row(0).unwrap();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, 1);
        assert!((row[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_saturates_at_pool_size() {
        let e1 = array![[1.0, 0.0]];
        let e2 = array![[0.0, 1.0], [1.0, 1.0]];
        let table = build_candidates(&space_from(e1, e2), &[0], &[0, 1], 10).unwrap();
        assert_eq!(table.row(0).unwrap().len(), 2);
    }

    #[test]
    fn knn_matches_exhaustive_sort_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let e1 = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0) + 0.01);
        let e2 = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0) + 0.01);
        let space = space_from(e1.clone(), e2.clone());
        let sources: Vec<u32> = (0..5).collect();
        let targets: Vec<u32> = (0..5).collect();
        let table = build_candidates(&space, &sources, &targets, 3).unwrap();
        for &s in &sources {
            // Oracle: full similarity row, sorted.
            let mut all: Vec<(u32, f64)> = targets
                .iter()
                .map(|&t| (t, cosine(e1.row(s as usize), e2.row(t as usize)).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(3);
            assert_eq!(table.row(s).unwrap(), all.as_slice());
        }
    }

    #[test]
    fn row_head_dominates_row() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let e1 = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0) + 0.01);
        let e2 = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0) + 0.01);
        let space = space_from(e1, e2);
        let table =
            build_candidates(&space, &[0, 1, 2, 3], &[0, 1, 2, 3, 4, 5], 4).unwrap();
        for s in 0..4u32 {
            let row = table.row(s).unwrap();
            for pair in row {
                assert!(row[0].1 >= pair.1);
            }
        }
    }

    #[test]
    fn k_below_one_rejected() {
        let e1 = array![[1.0]];
        let e2 = array![[1.0]];
        assert!(build_candidates(&space_from(e1, e2), &[0], &[0], 0).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let e1 = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0) + 0.01);
        let e2 = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0) + 0.01);
        let space = space_from(e1, e2);
        let sources: Vec<u32> = (0..6).collect();
        let targets: Vec<u32> = (0..8).collect();
        let a = build_candidates(&space, &sources, &targets, 3).unwrap();
        let b = build_candidates(&space, &sources, &targets, 3).unwrap();
        for &s in &sources {
            assert_eq!(a.row(s).unwrap(), b.row(s).unwrap());
        }
    }
}
