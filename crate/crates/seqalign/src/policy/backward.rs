//! Analytic gradients of `ln π(action | state)` with respect to every
//! policy tensor: the action head, the fusion layer, the bilinear
//! density-ratio form behind the MIE, and the GCN encoder layers of both
//! KGs (which share weights).
//!
//! The backward pass consumes the intermediates cached by
//! [`Policy::forward`] and the per-episode [`EncodeCache`]s, so it is valid
//! exactly while parameters are frozen — the contract the trainer upholds.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

use super::{concat, Action, EncodeCache, EncodedPair, ForwardPass, Policy, PolicyConfig, StateFeatures};

/// Gradient of `ln π` for every policy tensor (the value head is trained by
/// separate regression and has no `ln π` gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub gcn_weights: Vec<Array2<f64>>,
    pub fusion_weight: Array2<f64>,
    pub fusion_bias: Array1<f64>,
    pub mie_weight: Array2<f64>,
    pub head_weight: Array2<f64>,
}

impl PolicyGrads {
    pub fn zeros(config: &PolicyConfig) -> Self {
        let d = config.dim;
        let h = config.hidden;
        PolicyGrads {
            gcn_weights: (0..config.layers).map(|_| Array2::zeros((d, d))).collect(),
            fusion_weight: Array2::zeros((h, 2 * d)),
            fusion_bias: Array1::zeros(h),
            mie_weight: Array2::zeros((d, d)),
            head_weight: Array2::zeros((2, h + 1)),
        }
    }

    /// Canonical tensor names, matching [`super::PolicyParams`] minus the
    /// value head.
    pub fn tensor_names(config: &PolicyConfig) -> Vec<String> {
        let mut names: Vec<String> = (0..config.layers).map(|k| format!("gcn.{k}")).collect();
        names.extend(
            ["fusion_weight", "fusion_bias", "mie_weight", "head_weight"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }

    /// Flat row-major entry of a named tensor.
    pub fn entry(&self, name: &str, index: usize) -> Option<f64> {
        if let Some(k) = name.strip_prefix("gcn.") {
            let w = self.gcn_weights.get(k.parse::<usize>().ok()?)?;
            let cols = w.ncols();
            return w.get((index / cols, index % cols)).copied();
        }
        match name {
            "fusion_weight" => {
                let cols = self.fusion_weight.ncols();
                self.fusion_weight.get((index / cols, index % cols)).copied()
            }
            "fusion_bias" => self.fusion_bias.get(index).copied(),
            "mie_weight" => {
                let cols = self.mie_weight.ncols();
                self.mie_weight.get((index / cols, index % cols)).copied()
            }
            "head_weight" => {
                let cols = self.head_weight.ncols();
                self.head_weight.get((index / cols, index % cols)).copied()
            }
            _ => None,
        }
    }

    fn for_each_tensor(&self, mut f: impl FnMut(&str, &mut dyn Iterator<Item = f64>)) {
        for (k, w) in self.gcn_weights.iter().enumerate() {
            f(&format!("gcn.{k}"), &mut w.iter().copied());
        }
        f("fusion_weight", &mut self.fusion_weight.iter().copied());
        f("fusion_bias", &mut self.fusion_bias.iter().copied());
        f("mie_weight", &mut self.mie_weight.iter().copied());
        f("head_weight", &mut self.head_weight.iter().copied());
    }

    /// Global L2 norm over all tensors.
    pub fn l2_norm(&self) -> f64 {
        let mut sum = 0.0;
        self.for_each_tensor(|_, it| {
            for v in it {
                sum += v * v;
            }
        });
        sum.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.gcn_weights {
            *w *= s;
        }
        self.fusion_weight *= s;
        self.fusion_bias *= s;
        self.mie_weight *= s;
        self.head_weight *= s;
    }

    /// Rescale so the global L2 norm does not exceed `max_norm`.
    pub fn clip_to_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    /// Name of the first tensor containing a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.for_each_tensor(|name, it| {
            if found.is_none() {
                for v in it {
                    if !v.is_finite() {
                        found = Some(name.to_string());
                        break;
                    }
                }
            }
        });
        found
    }
}

impl Policy {
    /// Exact `∇_θ ln π(action | state)` for every policy tensor, backprop
    /// running through the head, fusion, MIE, and both KGs' GCN encodings.
    /// `fwd` must be the forward pass cached for exactly this state.
    pub fn log_prob_grad(
        &self,
        pair: &EncodedPair<'_>,
        state: &StateFeatures,
        fwd: &ForwardPass,
        action: Action,
    ) -> Result<PolicyGrads> {
        if fwd.source != state.source || fwd.target != state.target {
            return Err(Error::Protocol(format!(
                "forward cache is for pair ({}, {}), not ({}, {})",
                fwd.source, fwd.target, state.source, state.target
            )));
        }
        let dim = self.config.dim;
        let hidden = self.config.hidden;
        let mut grads = PolicyGrads::zeros(&self.config);

        // Softmax head: d ln π / d logit_r = 1[r = action] − p_r.
        let p = fwd.dist.probs();
        let mut dlogits = [-p[0], -p[1]];
        dlogits[action.index()] += 1.0;
        for (r, dl) in dlogits.iter().enumerate() {
            for c in 0..=hidden {
                grads.head_weight[(r, c)] = dl * fwd.u[c];
            }
        }
        let mut du = Array1::zeros(hidden + 1);
        for c in 0..=hidden {
            du[c] = self.params.head_weight[(0, c)] * dlogits[0]
                + self.params.head_weight[(1, c)] * dlogits[1];
        }
        let d_mie = du[hidden];

        // Fusion backward through the ReLU (dead units pass nothing).
        let cat = concat(state.gx.view(), state.gy.view());
        let mut dpre = Array1::zeros(hidden);
        for r in 0..hidden {
            if fwd.fusion_pre[r] > 0.0 {
                dpre[r] = du[r];
            }
        }
        for r in 0..hidden {
            if dpre[r] != 0.0 {
                grads.fusion_bias[r] = dpre[r];
                for c in 0..2 * dim {
                    grads.fusion_weight[(r, c)] = dpre[r] * cat[c];
                }
            }
        }
        let dcat = self.params.fusion_weight.t().dot(&dpre);
        let mut dgx = dcat.slice(s![..dim]).to_owned();
        let mut dgy = dcat.slice(s![dim..]).to_owned();
        let mut d_opponents: Vec<Array1<f64>> = Vec::new();

        // MIE backward: Î is the softmax weight of the target's score, so
        // dÎ/dt_i = Î((i == y) − σ_i) over scores t_i = gxᵀ W_f g_i.
        if self.config.use_mie {
            let y_idx = fwd.weights.len() - 1;
            let mie = fwd.mie;
            let wf_t_gx = self.params.mie_weight.t().dot(&state.gx);
            d_opponents = vec![Array1::zeros(dim); state.opponent_encodings.len()];
            for (i, &sigma) in fwd.weights.iter().enumerate() {
                let indicator = if i == y_idx { 1.0 } else { 0.0 };
                let dt = d_mie * mie * (indicator - sigma);
                if dt == 0.0 {
                    continue;
                }
                let g_i = if i == y_idx {
                    &state.gy
                } else {
                    &state.opponent_encodings[i]
                };
                for a in 0..dim {
                    let scaled = dt * state.gx[a];
                    for b in 0..dim {
                        grads.mie_weight[(a, b)] += scaled * g_i[b];
                    }
                }
                dgx.scaled_add(dt, &self.params.mie_weight.dot(g_i));
                if i == y_idx {
                    dgy.scaled_add(dt, &wf_t_gx);
                } else {
                    d_opponents[i].scaled_add(dt, &wf_t_gx);
                }
            }
        }

        // GCN backward from the entity-encoding gradients, walking each KG's
        // neighborhood structure down the layers. Both passes accumulate
        // into the same weight gradients (the encoder is shared).
        let mut seeds1 = BTreeMap::new();
        seeds1.insert(state.source, dgx);
        let mut seeds2: BTreeMap<u32, Array1<f64>> = BTreeMap::new();
        seeds2.insert(state.target, dgy);
        for (i, d_op) in d_opponents.into_iter().enumerate() {
            let id = state.opponent_ids[i];
            seeds2
                .entry(id)
                .and_modify(|v| *v += &d_op)
                .or_insert(d_op);
        }
        self.gcn_backward(pair.kg1, &pair.enc1, seeds1, &mut grads.gcn_weights)?;
        self.gcn_backward(pair.kg2, &pair.enc2, seeds2, &mut grads.gcn_weights)?;

        if let Some(tensor) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor });
        }
        Ok(grads)
    }

    /// Backprop output-side entity gradients (`frontier`) through the cached
    /// GCN layers of one KG, accumulating weight gradients into `dw`.
    fn gcn_backward(
        &self,
        kg: &KnowledgeGraph,
        cache: &EncodeCache,
        mut frontier: BTreeMap<u32, Array1<f64>>,
        dw: &mut [Array2<f64>],
    ) -> Result<()> {
        let dim = self.config.dim;
        for k in (1..=self.config.layers).rev() {
            let acts = &cache.layers[k];
            let mean = &cache.means[k - 1];
            let w = &self.params.gcn_weights[k - 1];
            let mut next: BTreeMap<u32, Array1<f64>> = BTreeMap::new();
            for (&e, dg) in &frontier {
                let row = e as usize;
                let mut dz = dg.clone();
                for j in 0..dim {
                    if acts[(row, j)] <= 0.0 {
                        dz[j] = 0.0;
                    }
                }
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for a in 0..dim {
                    if dz[a] != 0.0 {
                        for b in 0..dim {
                            dw[k - 1][(a, b)] += dz[a] * mean[(row, b)];
                        }
                    }
                }
                let dm = w.t().dot(&dz);
                let nb = kg.neighbors(e)?;
                let mut members: Vec<u32> = nb.iter().copied().collect();
                if !nb.contains(&e) {
                    members.push(e);
                }
                let share = dm / members.len() as f64;
                for &i in &members {
                    next.entry(i)
                        .and_modify(|v| *v += &share)
                        .or_insert_with(|| share.clone());
                }
            }
            frontier = next;
        }
        Ok(())
    }

    /// `θ ← θ + scale · grads` over all policy tensors, verifying finiteness.
    pub fn apply_policy_step(&mut self, grads: &PolicyGrads, scale: f64) -> Result<()> {
        for (k, g) in grads.gcn_weights.iter().enumerate() {
            self.params.gcn_weights[k].scaled_add(scale, g);
        }
        self.params.fusion_weight.scaled_add(scale, &grads.fusion_weight);
        self.params.fusion_bias.scaled_add(scale, &grads.fusion_bias);
        self.params.mie_weight.scaled_add(scale, &grads.mie_weight);
        self.params.head_weight.scaled_add(scale, &grads.head_weight);
        if let Some(tensor) = self.params.first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor });
        }
        Ok(())
    }
}
