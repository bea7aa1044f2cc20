//! The agent's policy π(a | s, θ): a graph-convolutional encoder shared by
//! both KGs, a fusion layer over the pair encoding, a contrastive
//! mutual-information estimate against the state's opponent candidates, and
//! a two-way softmax action head.
//!
//! Gradients are computed analytically in [`backward`]; there is no autodiff.
//! Parameters are plain `ndarray` tensors so checkpoints and tests can
//! inspect every entry.

pub mod backward;
pub mod checkpoint;

pub use backward::PolicyGrads;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::rng::component_rng;

/// The two moves available on a candidate pair. `Mismatch` is action 0,
/// `Match` is action 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Mismatch,
    Match,
}

impl Action {
    /// Index into logit/probability arrays (mismatch = 0, match = 1).
    pub fn index(self) -> usize {
        match self {
            Action::Mismatch => 0,
            Action::Match => 1,
        }
    }

    pub fn as_bit(self) -> u8 {
        self.index() as u8
    }
}

/// Probabilities of the two actions; always positive, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub p_mismatch: f64,
    pub p_match: f64,
}

impl ActionDistribution {
    /// Probabilities indexed by [`Action::index`].
    pub fn probs(&self) -> [f64; 2] {
        [self.p_mismatch, self.p_match]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        if rng.random::<f64>() < self.p_match {
            Action::Match
        } else {
            Action::Mismatch
        }
    }

    /// Deterministic argmax; exact ties fall back to mismatch.
    pub fn greedy(&self) -> Action {
        if self.p_match > self.p_mismatch {
            Action::Match
        } else {
            Action::Mismatch
        }
    }
}

/// Architecture hyper-parameters. `dim` is the input embedding width (and
/// the GCN width), `hidden` the fusion output width, `layers` the GCN depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
    pub use_mie: bool,
}

impl PolicyConfig {
    pub fn new(dim: usize, seed: u64) -> Self {
        PolicyConfig {
            dim,
            hidden: dim,
            layers: 2,
            seed,
            use_mie: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "policy dimensions must be positive (dim {}, hidden {}, layers {})",
                self.dim, self.hidden, self.layers
            )));
        }
        Ok(())
    }
}

/// All learnable tensors. Every entry stays finite through init, updates,
/// and checkpoint round-trips.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// Per-layer GCN weights, each `dim × dim`, shared across both KGs.
    pub gcn_weights: Vec<Array2<f64>>,
    /// Fusion layer `hidden × 2·dim`.
    pub fusion_weight: Array2<f64>,
    pub fusion_bias: Array1<f64>,
    /// Bilinear density-ratio form, `dim × dim`.
    pub mie_weight: Array2<f64>,
    /// Action head, `2 × (hidden + 1)`.
    pub head_weight: Array2<f64>,
    /// Linear value baseline over the concatenated pair encoding.
    pub value_weight: Array1<f64>,
    pub value_bias: f64,
}

impl PolicyParams {
    /// Canonical tensor listing (checkpoint order).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.gcn_weights.len()).map(|k| format!("gcn.{k}")).collect();
        names.extend(
            ["fusion_weight", "fusion_bias", "mie_weight", "head_weight", "value_weight", "value_bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }

    /// Row-major copy of a named tensor's entries.
    pub fn tensor_data(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(k) = name.strip_prefix("gcn.") {
            return Some(self.gcn_weights.get(k.parse::<usize>().ok()?)?.iter().copied().collect());
        }
        match name {
            "fusion_weight" => Some(self.fusion_weight.iter().copied().collect()),
            "fusion_bias" => Some(self.fusion_bias.to_vec()),
            "mie_weight" => Some(self.mie_weight.iter().copied().collect()),
            "head_weight" => Some(self.head_weight.iter().copied().collect()),
            "value_weight" => Some(self.value_weight.to_vec()),
            "value_bias" => Some(vec![self.value_bias]),
            _ => None,
        }
    }

    /// Overwrite a named tensor from row-major data; the length must match.
    pub fn set_tensor_data(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let mismatch = |expected: usize| Error::LengthMismatch {
            context: format!("tensor '{name}'"),
            expected,
            found: data.len(),
        };
        let fill2 = |m: &mut Array2<f64>, data: &[f64]| -> Result<()> {
            if m.len() != data.len() {
                return Err(mismatch(m.len()));
            }
            for (slot, v) in m.iter_mut().zip(data) {
                *slot = *v;
            }
            Ok(())
        };
        if let Some(k) = name.strip_prefix("gcn.") {
            let idx: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("unknown tensor '{name}'")))?;
            let w = self
                .gcn_weights
                .get_mut(idx)
                .ok_or_else(|| Error::Config(format!("unknown tensor '{name}'")))?;
            return fill2(w, data);
        }
        match name {
            "fusion_weight" => fill2(&mut self.fusion_weight, data),
            "mie_weight" => fill2(&mut self.mie_weight, data),
            "head_weight" => fill2(&mut self.head_weight, data),
            "fusion_bias" => {
                if self.fusion_bias.len() != data.len() {
                    return Err(mismatch(self.fusion_bias.len()));
                }
                self.fusion_bias.assign(&Array1::from(data.to_vec()));
                Ok(())
            }
            "value_weight" => {
                if self.value_weight.len() != data.len() {
                    return Err(mismatch(self.value_weight.len()));
                }
                self.value_weight.assign(&Array1::from(data.to_vec()));
                Ok(())
            }
            "value_bias" => {
                if data.len() != 1 {
                    return Err(mismatch(1));
                }
                self.value_bias = data[0];
                Ok(())
            }
            _ => Err(Error::Config(format!("unknown tensor '{name}'"))),
        }
    }

    /// Name of the first tensor holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensor_names()
            .into_iter()
            .find(|name| self.tensor_data(name).unwrap().iter().any(|v| !v.is_finite()))
    }
}

/// The encoded state of one candidate pair: source/target encodings plus the
/// encodings of the target's opponent candidates.
#[derive(Debug, Clone)]
pub struct StateFeatures {
    pub source: u32,
    pub target: u32,
    pub opponent_ids: Vec<u32>,
    pub gx: Array1<f64>,
    pub gy: Array1<f64>,
    pub opponent_encodings: Vec<Array1<f64>>,
}

/// Cached GCN activations for one KG: `layers[0]` is the input embedding
/// matrix, `layers[k]` the layer-k outputs; `means[k-1]` the per-entity
/// neighborhood means feeding layer k. Valid while parameters are frozen.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub layers: Vec<Array2<f64>>,
    pub means: Vec<Array2<f64>>,
}

impl EncodeCache {
    /// Final-layer encoding of entity `e`.
    pub fn encoding(&self, e: u32) -> ArrayView1<'_, f64> {
        self.layers.last().unwrap().row(e as usize)
    }

    pub fn num_entities(&self) -> usize {
        self.layers[0].nrows()
    }
}

/// Both KGs encoded under one parameter snapshot; the unit of per-episode
/// memoization.
#[derive(Debug)]
pub struct EncodedPair<'a> {
    pub kg1: &'a KnowledgeGraph,
    pub kg2: &'a KnowledgeGraph,
    pub enc1: EncodeCache,
    pub enc2: EncodeCache,
}

/// Everything the forward pass computed for one state, kept for the
/// backward pass and for tests.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub source: u32,
    pub target: u32,
    pub dist: ActionDistribution,
    pub logits: [f64; 2],
    /// Head input `(h ‖ Î)`, length `hidden + 1`.
    pub u: Array1<f64>,
    /// Fusion pre-activation (before ReLU), length `hidden`.
    pub fusion_pre: Array1<f64>,
    /// Mutual-information estimate fed to the head (0 when disabled).
    pub mie: f64,
    /// Log density-ratio scores, opponents first, the target last.
    pub scores: Vec<f64>,
    /// Softmax weights of `scores`; the last entry equals `mie`.
    pub weights: Vec<f64>,
}

/// Policy parameters plus architecture; all forward math lives here.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: PolicyParams,
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn uniform_vector(rng: &mut impl Rng, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..bound))
}

pub(crate) fn concat(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(&a);
    out.slice_mut(s![a.len()..]).assign(&b);
    out
}

impl Policy {
    /// Fresh policy with uniform `±1/√fan_in` init, seeded deterministically.
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = component_rng(config.seed, "policy-init");
        let d = config.dim;
        let h = config.hidden;
        let gcn_weights = (0..config.layers).map(|_| uniform_matrix(&mut rng, d, d)).collect();
        let fusion_weight = uniform_matrix(&mut rng, h, 2 * d);
        let fusion_bias = uniform_vector(&mut rng, h, 2 * d);
        let mie_weight = uniform_matrix(&mut rng, d, d);
        let head_weight = uniform_matrix(&mut rng, 2, h + 1);
        let value_weight = uniform_vector(&mut rng, 2 * d, 2 * d);
        let value_bias = uniform_vector(&mut rng, 1, 2 * d)[0];
        Ok(Policy {
            config,
            params: PolicyParams {
                gcn_weights,
                fusion_weight,
                fusion_bias,
                mie_weight,
                head_weight,
                value_weight,
                value_bias,
            },
        })
    }

    /// Encode every entity of one KG, caching per-layer activations and the
    /// neighborhood means each layer consumed. Layer k computes
    /// `g_e = ReLU(W_k · mean_{i ∈ N(e) ∪ {e}} g_i)`.
    pub fn encode(&self, kg: &KnowledgeGraph, embeddings: &Array2<f64>) -> Result<EncodeCache> {
        if embeddings.ncols() != self.config.dim {
            return Err(Error::ShapeMismatch {
                context: "gcn encode".to_string(),
                details: format!("embedding dim {} vs policy dim {}", embeddings.ncols(), self.config.dim),
            });
        }
        if embeddings.nrows() != kg.num_entities() {
            return Err(Error::ShapeMismatch {
                context: "gcn encode".to_string(),
                details: format!("{} embedding rows vs {} entities", embeddings.nrows(), kg.num_entities()),
            });
        }
        let n = kg.num_entities();
        let mut layers = Vec::with_capacity(self.config.layers + 1);
        let mut means = Vec::with_capacity(self.config.layers);
        layers.push(embeddings.clone());
        for w in &self.params.gcn_weights {
            let prev = layers.last().unwrap();
            let mut mean = Array2::zeros((n, self.config.dim));
            for e in 0..n {
                let nb = kg.neighbors(e as u32)?;
                let c = if nb.contains(&(e as u32)) { nb.len() } else { nb.len() + 1 };
                let mut acc = prev.row(e).to_owned();
                for &i in nb {
                    if i as usize != e {
                        acc += &prev.row(i as usize);
                    }
                }
                acc /= c as f64;
                mean.row_mut(e).assign(&acc);
            }
            let mut out = mean.dot(&w.t());
            out.mapv_inplace(|v| v.max(0.0));
            means.push(mean);
            layers.push(out);
        }
        Ok(EncodeCache { layers, means })
    }

    /// Final-layer GCN encoding of a single entity.
    pub fn gcn_encode(&self, kg: &KnowledgeGraph, embeddings: &Array2<f64>, e: u32) -> Result<Array1<f64>> {
        if e as usize >= kg.num_entities() {
            return Err(Error::UnknownEntityId {
                id: e,
                context: "gcn encode".to_string(),
            });
        }
        Ok(self.encode(kg, embeddings)?.encoding(e).to_owned())
    }

    /// Encode both KGs under the current (frozen) parameters.
    pub fn encode_pair<'a>(
        &self,
        kg1: &'a KnowledgeGraph,
        emb1: &Array2<f64>,
        kg2: &'a KnowledgeGraph,
        emb2: &Array2<f64>,
    ) -> Result<EncodedPair<'a>> {
        Ok(EncodedPair {
            kg1,
            kg2,
            enc1: self.encode(kg1, emb1)?,
            enc2: self.encode(kg2, emb2)?,
        })
    }

    /// Assemble the state features for a candidate pair from cached
    /// encodings. `opponents` are alternative targets for the source,
    /// excluding `target` itself.
    pub fn state_features(
        &self,
        pair: &EncodedPair<'_>,
        source: u32,
        target: u32,
        opponents: &[u32],
    ) -> Result<StateFeatures> {
        if source as usize >= pair.enc1.num_entities() {
            return Err(Error::UnknownEntityId {
                id: source,
                context: "state features (source)".to_string(),
            });
        }
        for &t in opponents.iter().chain(std::iter::once(&target)) {
            if t as usize >= pair.enc2.num_entities() {
                return Err(Error::UnknownEntityId {
                    id: t,
                    context: "state features (target)".to_string(),
                });
            }
        }
        Ok(StateFeatures {
            source,
            target,
            opponent_ids: opponents.to_vec(),
            gx: pair.enc1.encoding(source).to_owned(),
            gy: pair.enc2.encoding(target).to_owned(),
            opponent_encodings: opponents.iter().map(|&o| pair.enc2.encoding(o).to_owned()).collect(),
        })
    }

    fn fuse_parts(&self, gx: ArrayView1<f64>, gy: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let cat = concat(gx, gy);
        let pre = self.params.fusion_weight.dot(&cat) + &self.params.fusion_bias;
        let h = pre.mapv(|v| v.max(0.0));
        (pre, h)
    }

    /// Pair encoding `h = ReLU(W_h · (gx ‖ gy) + b_h)`.
    pub fn fuse(&self, gx: ArrayView1<f64>, gy: ArrayView1<f64>) -> Array1<f64> {
        self.fuse_parts(gx, gy).1
    }

    /// `ln f(gx, gy) = gxᵀ · W_f · gy` — the log of the density ratio.
    pub fn log_density_ratio(&self, gx: ArrayView1<f64>, gy: ArrayView1<f64>) -> f64 {
        gx.dot(&self.params.mie_weight.dot(&gy))
    }

    /// Density ratio `f = exp(gxᵀ · W_f · gy)`; always positive.
    pub fn density_ratio(&self, gx: ArrayView1<f64>, gy: ArrayView1<f64>) -> f64 {
        self.log_density_ratio(gx, gy).exp()
    }

    fn mie_parts(
        &self,
        gx: ArrayView1<f64>,
        gy: ArrayView1<f64>,
        opponents: &[Array1<f64>],
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let mut scores: Vec<f64> = opponents.iter().map(|o| self.log_density_ratio(gx, o.view())).collect();
        scores.push(self.log_density_ratio(gx, gy));
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        let weights: Vec<f64> = scores.iter().map(|t| (t - lse).exp()).collect();
        (*weights.last().unwrap(), scores, weights)
    }

    /// Contrastive estimate `Î = f(gx,gy) / Σ_{i ∈ opponents ∪ {y}} f(gx,gi)`,
    /// computed in log-space; always in (0, 1].
    pub fn mie_score(&self, gx: ArrayView1<f64>, gy: ArrayView1<f64>, opponents: &[Array1<f64>]) -> f64 {
        self.mie_parts(gx, gy, opponents).0
    }

    /// Action distribution `softmax(W_p · (h ‖ Î))`, with all intermediates
    /// cached for the backward pass.
    pub fn forward(&self, state: &StateFeatures) -> ForwardPass {
        let (pre, h) = self.fuse_parts(state.gx.view(), state.gy.view());
        let (mie, scores, weights) = if self.config.use_mie {
            self.mie_parts(state.gx.view(), state.gy.view(), &state.opponent_encodings)
        } else {
            (0.0, Vec::new(), Vec::new())
        };
        let hidden = self.config.hidden;
        let mut u = Array1::zeros(hidden + 1);
        u.slice_mut(s![..hidden]).assign(&h);
        u[hidden] = mie;
        let logits = self.params.head_weight.dot(&u);
        let max = logits[0].max(logits[1]);
        let e0 = (logits[0] - max).exp();
        let e1 = (logits[1] - max).exp();
        let z = e0 + e1;
        ForwardPass {
            source: state.source,
            target: state.target,
            dist: ActionDistribution {
                p_mismatch: e0 / z,
                p_match: e1 / z,
            },
            logits: [logits[0], logits[1]],
            u,
            fusion_pre: pre,
            mie,
            scores,
            weights,
        }
    }

    /// Baseline `v̂ = w_v · (gx ‖ gy) + b_v`.
    pub fn value_estimate(&self, state: &StateFeatures) -> f64 {
        let cat = concat(state.gx.view(), state.gy.view());
        self.params.value_weight.dot(&cat) + self.params.value_bias
    }

    /// One squared-error regression step pulling `v̂(state)` toward
    /// `target_return` with step size `alpha`.
    pub fn apply_value_step(&mut self, state: &StateFeatures, target_return: f64, alpha: f64) -> Result<()> {
        let cat = concat(state.gx.view(), state.gy.view());
        let delta = target_return - (self.params.value_weight.dot(&cat) + self.params.value_bias);
        self.params.value_weight.scaled_add(alpha * delta, &cat);
        self.params.value_bias += alpha * delta;
        if !self.params.value_bias.is_finite() || self.params.value_weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: "value_weight".to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_config(dim: usize, layers: usize, seed: u64) -> PolicyConfig {
        PolicyConfig {
            dim,
            hidden: dim,
            layers,
            seed,
            use_mie: true,
        }
    }

    fn identity_gcn(policy: &mut Policy) {
        for w in &mut policy.params.gcn_weights {
            *w = Array2::eye(policy.config.dim);
        }
    }

    #[test]
    fn gcn_identity_on_self_loop_returns_embedding() {
        // Entity with only a self-loop: the aggregation set is {e} alone.
        let kg = KnowledgeGraph::parse("a\tr\ta\nb\tr\tb\n", "test").unwrap();
        let mut policy = Policy::new(tiny_config(3, 2, 1)).unwrap();
        identity_gcn(&mut policy);
        let emb = array![[1.0, 2.0, 0.5], [0.0, 3.0, 1.0]];
        let out = policy.gcn_encode(&kg, &emb, 0).unwrap();
        assert_eq!(out, array![1.0, 2.0, 0.5]);
    }

    #[test]
    fn gcn_identity_single_neighbor_averages() {
        let kg = KnowledgeGraph::parse("a\tr\tb\n", "test").unwrap();
        let mut policy = Policy::new(tiny_config(2, 1, 1)).unwrap();
        identity_gcn(&mut policy);
        let emb = array![[1.0, 0.0], [0.0, 1.0]];
        let out = policy.gcn_encode(&kg, &emb, 0).unwrap();
        assert_eq!(out, array![0.5, 0.5]);
    }

    /// Independent recursive evaluation of the encoder, one entity at a time.
    fn recursive_encode(
        kg: &KnowledgeGraph,
        emb: &Array2<f64>,
        weights: &[Array2<f64>],
        e: u32,
        layer: usize,
    ) -> Array1<f64> {
        if layer == 0 {
            return emb.row(e as usize).to_owned();
        }
        let nb = kg.neighbors(e).unwrap();
        let mut members: Vec<u32> = nb.iter().copied().collect();
        if !nb.contains(&e) {
            members.push(e);
        }
        let dim = emb.ncols();
        let mut mean = Array1::zeros(dim);
        for &i in &members {
            mean += &recursive_encode(kg, emb, weights, i, layer - 1);
        }
        mean /= members.len() as f64;
        let z = weights[layer - 1].dot(&mean);
        z.mapv(|v| v.max(0.0))
    }

    #[test]
    fn gcn_matches_recursive_oracle_on_chain() {
        let kg = KnowledgeGraph::parse("a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\te\n", "test").unwrap();
        let policy = Policy::new(tiny_config(3, 2, 42)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let emb = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let cache = policy.encode(&kg, &emb).unwrap();
        for e in 0..5u32 {
            let expected = recursive_encode(&kg, &emb, &policy.params.gcn_weights, e, 2);
            let got = cache.encoding(e);
            for j in 0..3 {
                assert!((got[j] - expected[j]).abs() < 1e-12, "entity {e} dim {j}");
            }
        }
    }

    #[test]
    fn fuse_zero_weights_zero_bias_gives_zeros() {
        let mut policy = Policy::new(tiny_config(2, 1, 3)).unwrap();
        policy.params.fusion_weight.fill(0.0);
        policy.params.fusion_bias.fill(0.0);
        let gx = array![1.0, -2.0];
        let gy = array![3.0, 4.0];
        assert_eq!(policy.fuse(gx.view(), gy.view()), array![0.0, 0.0]);
    }

    #[test]
    fn fuse_zero_weights_positive_bias_gives_bias() {
        let mut policy = Policy::new(tiny_config(2, 1, 3)).unwrap();
        policy.params.fusion_weight.fill(0.0);
        policy.params.fusion_bias.fill(0.7);
        let gx = array![1.0, -2.0];
        let gy = array![3.0, 4.0];
        assert_eq!(policy.fuse(gx.view(), gy.view()), array![0.7, 0.7]);
    }

    #[test]
    fn fuse_matches_naive_loop_oracle() {
        let policy = Policy::new(tiny_config(3, 1, 11)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let gx = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let gy = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let got = policy.fuse(gx.view(), gy.view());
        let cat: Vec<f64> = gx.iter().chain(gy.iter()).copied().collect();
        for r in 0..3 {
            let mut acc = policy.params.fusion_bias[r];
            for (c, x) in cat.iter().enumerate() {
                acc += policy.params.fusion_weight[(r, c)] * x;
            }
            let expected = acc.max(0.0);
            assert!((got[r] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn density_ratio_zero_form_is_one() {
        let mut policy = Policy::new(tiny_config(3, 1, 2)).unwrap();
        policy.params.mie_weight.fill(0.0);
        let g = array![0.4, -1.0, 2.0];
        assert_eq!(policy.density_ratio(g.view(), g.view()), 1.0);
    }

    #[test]
    fn density_ratio_unit_case_is_e() {
        let mut policy = Policy::new(tiny_config(3, 1, 2)).unwrap();
        policy.params.mie_weight = Array2::eye(3);
        let e1 = array![1.0, 0.0, 0.0];
        let got = policy.density_ratio(e1.view(), e1.view());
        assert!((got - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn density_ratio_matches_scalar_oracle() {
        let policy = Policy::new(tiny_config(3, 1, 19)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..50 {
            let gx = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let gy = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let mut quad = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    quad += gx[i] * policy.params.mie_weight[(i, j)] * gy[j];
                }
            }
            let got = policy.density_ratio(gx.view(), gy.view());
            assert!((got - quad.exp()).abs() < 1e-12 * quad.exp().max(1.0));
            assert!(got > 0.0);
        }
    }

    #[test]
    fn mie_no_opponents_is_one() {
        let policy = Policy::new(tiny_config(3, 1, 4)).unwrap();
        let gx = array![0.2, 0.1, -0.4];
        let gy = array![1.0, 0.5, 0.0];
        assert!((policy.mie_score(gx.view(), gy.view(), &[]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mie_identical_opponent_halves() {
        let policy = Policy::new(tiny_config(3, 1, 4)).unwrap();
        let gx = array![0.2, 0.1, -0.4];
        let gy = array![1.0, 0.5, 0.0];
        let opponents = vec![gy.clone()];
        assert!((policy.mie_score(gx.view(), gy.view(), &opponents) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mie_matches_direct_sum_oracle() {
        let policy = Policy::new(tiny_config(3, 1, 77)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let gx = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let gy = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let opponents: Vec<Array1<f64>> = (0..3)
                .map(|_| Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0)))
                .collect();
            // Oracle: unreduced exp-sum arithmetic (magnitudes are moderate).
            let f = |a: &Array1<f64>, b: &Array1<f64>| -> f64 {
                let mut q = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        q += a[i] * policy.params.mie_weight[(i, j)] * b[j];
                    }
                }
                q.exp()
            };
            let denom: f64 = opponents.iter().map(|o| f(&gx, o)).sum::<f64>() + f(&gx, &gy);
            let expected = f(&gx, &gy) / denom;
            let got = policy.mie_score(gx.view(), gy.view(), &opponents);
            assert!((got - expected).abs() < 1e-12);
            assert!(got > 0.0 && got <= 1.0);
        }
    }

    #[test]
    fn mie_strictly_decreases_with_extra_opponent() {
        let policy = Policy::new(tiny_config(4, 1, 5)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..100 {
            let gx = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let gy = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let mut opponents: Vec<Array1<f64>> = Vec::new();
            let mut last = policy.mie_score(gx.view(), gy.view(), &opponents);
            for _ in 0..3 {
                opponents.push(Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)));
                let next = policy.mie_score(gx.view(), gy.view(), &opponents);
                assert!(next < last, "appending an opponent must shrink the estimate");
                last = next;
            }
        }
    }

    fn random_state(policy: &Policy, rng: &mut ChaCha12Rng, opponents: usize) -> StateFeatures {
        let d = policy.config.dim;
        StateFeatures {
            source: 0,
            target: 0,
            opponent_ids: (0..opponents as u32).collect(),
            gx: Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)),
            gy: Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)),
            opponent_encodings: (0..opponents)
                .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    #[test]
    fn forward_zero_head_is_uniform() {
        let mut policy = Policy::new(tiny_config(3, 1, 8)).unwrap();
        policy.params.head_weight.fill(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let state = random_state(&policy, &mut rng, 2);
        let fwd = policy.forward(&state);
        assert_eq!(fwd.dist.p_match, 0.5);
        assert_eq!(fwd.dist.p_mismatch, 0.5);
    }

    #[test]
    fn forward_is_shift_invariant_in_logits() {
        let policy = Policy::new(tiny_config(3, 1, 8)).unwrap();
        let mut shifted = policy.clone();
        // Add the same row vector to both head rows: logits shift by a common
        // constant for every input, so the distribution must not move.
        let delta = Array1::from_shape_fn(policy.config.hidden + 1, |j| 0.3 * (j as f64 + 1.0));
        for r in 0..2 {
            let mut row = shifted.params.head_weight.row_mut(r);
            row += &delta;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        for _ in 0..20 {
            let state = random_state(&policy, &mut rng, 3);
            let a = policy.forward(&state).dist;
            let b = shifted.forward(&state).dist;
            assert!((a.p_match - b.p_match).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_probabilities_normalized_and_open() {
        let policy = Policy::new(tiny_config(4, 2, 51)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        for _ in 0..100 {
            let state = random_state(&policy, &mut rng, 3);
            let dist = policy.forward(&state).dist;
            assert!((dist.p_match + dist.p_mismatch - 1.0).abs() < 1e-9);
            assert!(dist.p_match > 0.0 && dist.p_match < 1.0);
            assert!(dist.p_mismatch > 0.0 && dist.p_mismatch < 1.0);
        }
    }

    #[test]
    fn forward_matches_end_to_end_recompute_oracle() {
        let policy = Policy::new(tiny_config(3, 2, 61)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        for _ in 0..30 {
            let state = random_state(&policy, &mut rng, 2);
            let fwd = policy.forward(&state);
            // Independent straight-line recomputation with plain loops.
            let d = 3;
            let cat: Vec<f64> = state.gx.iter().chain(state.gy.iter()).copied().collect();
            let mut h = vec![0.0; d];
            for (r, slot) in h.iter_mut().enumerate() {
                let mut acc = policy.params.fusion_bias[r];
                for (c, x) in cat.iter().enumerate() {
                    acc += policy.params.fusion_weight[(r, c)] * x;
                }
                *slot = acc.max(0.0);
            }
            let quad = |b: &Array1<f64>| -> f64 {
                let mut q = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        q += state.gx[i] * policy.params.mie_weight[(i, j)] * b[j];
                    }
                }
                q
            };
            let mut denom = quad(&state.gy).exp();
            for o in &state.opponent_encodings {
                denom += quad(o).exp();
            }
            let mie = quad(&state.gy).exp() / denom;
            let mut logits = [0.0; 2];
            for (r, logit) in logits.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, hc) in h.iter().enumerate() {
                    acc += policy.params.head_weight[(r, c)] * hc;
                }
                acc += policy.params.head_weight[(r, d)] * mie;
                *logit = acc;
            }
            let z = logits[0].exp() + logits[1].exp();
            let expected_match = logits[1].exp() / z;
            assert!((fwd.dist.p_match - expected_match).abs() < 1e-12);
            assert!((fwd.mie - mie).abs() < 1e-12);
        }
    }

    #[test]
    fn disabled_mie_slot_is_zero() {
        let mut config = tiny_config(3, 1, 9);
        config.use_mie = false;
        let policy = Policy::new(config).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let state = random_state(&policy, &mut rng, 3);
        let fwd = policy.forward(&state);
        assert_eq!(fwd.mie, 0.0);
        assert_eq!(fwd.u[policy.config.hidden], 0.0);
        assert!(fwd.scores.is_empty());
    }

    #[test]
    fn value_estimate_zero_weights_is_zero() {
        let mut policy = Policy::new(tiny_config(2, 1, 10)).unwrap();
        policy.params.value_weight.fill(0.0);
        policy.params.value_bias = 0.0;
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let state = random_state(&policy, &mut rng, 0);
        assert_eq!(policy.value_estimate(&state), 0.0);
    }

    #[test]
    fn value_estimate_one_hot_picks_component() {
        let mut policy = Policy::new(tiny_config(2, 1, 10)).unwrap();
        policy.params.value_weight.fill(0.0);
        policy.params.value_weight[0] = 1.0;
        policy.params.value_bias = 0.0;
        let mut rng = ChaCha12Rng::seed_from_u64(67);
        let state = random_state(&policy, &mut rng, 0);
        assert_eq!(policy.value_estimate(&state), state.gx[0]);
    }

    #[test]
    fn value_estimate_matches_dot_oracle() {
        let policy = Policy::new(tiny_config(3, 1, 12)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        for _ in 0..50 {
            let state = random_state(&policy, &mut rng, 0);
            let mut acc = policy.params.value_bias;
            for (i, x) in state.gx.iter().chain(state.gy.iter()).enumerate() {
                acc += policy.params.value_weight[i] * x;
            }
            assert!((policy.value_estimate(&state) - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn value_step_reduces_regression_error() {
        let mut policy = Policy::new(tiny_config(3, 1, 13)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let state = random_state(&policy, &mut rng, 0);
        let target = 2.5;
        let before = (policy.value_estimate(&state) - target).abs();
        policy.apply_value_step(&state, target, 0.05).unwrap();
        let after = (policy.value_estimate(&state) - target).abs();
        assert!(after < before);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = Policy::new(tiny_config(5, 2, 99)).unwrap();
        let b = Policy::new(tiny_config(5, 2, 99)).unwrap();
        let c = Policy::new(tiny_config(5, 2, 100)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / (5.0f64).sqrt();
        for w in &a.params.gcn_weights {
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        let head_bound = 1.0 / ((a.config.hidden + 1) as f64).sqrt();
        assert!(a.params.head_weight.iter().all(|v| v.abs() <= head_bound));
    }

    #[test]
    fn encode_is_bitwise_deterministic() {
        let kg = KnowledgeGraph::parse("a\tr\tb\nb\tr\tc\na\tr\tc\n", "test").unwrap();
        let policy = Policy::new(tiny_config(4, 2, 15)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(79);
        let emb = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let a = policy.encode(&kg, &emb).unwrap();
        let b = policy.encode(&kg, &emb).unwrap();
        for k in 0..a.layers.len() {
            assert_eq!(a.layers[k], b.layers[k]);
        }
    }

    #[test]
    fn encode_rejects_wrong_dim() {
        let kg = KnowledgeGraph::parse("a\tr\tb\n", "test").unwrap();
        let policy = Policy::new(tiny_config(4, 2, 15)).unwrap();
        let emb = Array2::zeros((2, 3));
        assert!(policy.encode(&kg, &emb).is_err());
    }

    #[test]
    fn greedy_action_prefers_higher_probability() {
        let dist = ActionDistribution {
            p_mismatch: 0.3,
            p_match: 0.7,
        };
        assert_eq!(dist.greedy(), Action::Match);
        let dist = ActionDistribution {
            p_mismatch: 0.7,
            p_match: 0.3,
        };
        assert_eq!(dist.greedy(), Action::Mismatch);
    }

    #[test]
    fn sampling_follows_distribution() {
        let dist = ActionDistribution {
            p_mismatch: 0.25,
            p_match: 0.75,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(83);
        let n = 20_000;
        let matches = (0..n).filter(|_| dist.sample(&mut rng) == Action::Match).count();
        let rate = matches as f64 / n as f64;
        assert!((rate - 0.75).abs() < 0.02, "empirical match rate {rate}");
    }
}
