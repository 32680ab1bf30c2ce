//! Sparse top-k mixture of experts over a day-of-year embedding.

use super::embed::{EmbedCache, EmbedGrads, Embedding};
use crate::nn::{softmax, Activation, ForwardCache, Grads, MlpParams, ParamTensors};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel {
    pub embedding: Embedding,
    /// Single linear layer `d → E` producing gate logits.
    pub gate: MlpParams,
    /// `d → hidden (relu) → 1` regressors.
    pub experts: Vec<MlpParams>,
    pub k: usize,
    /// Raw outputs are in standardized units; `price = shift + scale · raw`.
    pub output_shift: f64,
    pub output_scale: f64,
}

/// Weights over all experts after top-k selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gating {
    /// Selected expert indices, highest logit first (ties to the lower index).
    pub selected: Vec<usize>,
    /// Length-E weights; exactly zero outside `selected`.
    pub weights: Vec<f64>,
}

/// Softmax over the `k` largest logits; everything else gets weight 0.
pub fn topk_softmax(logits: &[f64], k: usize) -> Result<Gating> {
    if k == 0 || k > logits.len() {
        return Err(Error::Config(format!(
            "top-k needs 1 ≤ k ≤ {} experts, got k = {k}",
            logits.len()
        )));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    let probs = softmax(&order.iter().map(|&i| logits[i]).collect::<Vec<_>>());
    let mut weights = vec![0.0; logits.len()];
    for (&i, p) in order.iter().zip(probs) {
        weights[i] = p;
    }
    Ok(Gating {
        selected: order,
        weights,
    })
}

/// Gate an embedded input: logits from `gate`, then [`topk_softmax`].
pub fn gate_topk(embedded: &[f64], gate: &MlpParams, k: usize) -> Result<Gating> {
    topk_softmax(&gate.forward(embedded)?, k)
}

/// Everything [`MoeModel::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct MoeCache {
    embed: EmbedCache,
    gate: ForwardCache,
    pub gating: Gating,
    experts: Vec<(usize, f64, ForwardCache)>,
    /// Standardized prediction before the output affine map.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeGrads {
    pub embedding: EmbedGrads,
    pub gate: Grads,
    /// `None` for experts that were never selected.
    pub experts: Vec<Option<Grads>>,
}

impl MoeModel {
    pub fn new(embedding: Embedding, experts: usize, k: usize, expert_hidden: usize, rng: &mut Rng) -> Result<Self> {
        if experts == 0 || k == 0 || k > experts {
            return Err(Error::Config(format!("need 1 ≤ k ≤ E, got k = {k}, E = {experts}")));
        }
        let d = embedding.dim();
        let gate = MlpParams::init(&[d, experts], &[Activation::Identity], rng)?;
        let experts = (0..experts)
            .map(|_| MlpParams::init(&[d, expert_hidden, 1], &[Activation::Relu, Activation::Identity], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding,
            gate,
            experts,
            k,
            output_shift: 0.0,
            output_scale: 1.0,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Forecast price for input `x` (a day of year, possibly augmented).
    pub fn predict(&self, x: f64) -> Result<f64> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: f64) -> Result<(f64, MoeCache)> {
        let (emb, embed) = self.embedding.forward_cached(x)?;
        let (logits, gate) = self.gate.forward_cached(&emb)?;
        let gating = topk_softmax(&logits, self.k)?;
        let mut raw = 0.0;
        let mut experts = Vec::with_capacity(self.k);
        for &e in &gating.selected {
            let (y, cache) = self.experts[e].forward_cached(&emb)?;
            raw += gating.weights[e] * y[0];
            experts.push((e, y[0], cache));
        }
        let price = self.output_shift + self.output_scale * raw;
        Ok((
            price,
            MoeCache {
                embed,
                gate,
                gating,
                experts,
                raw,
            },
        ))
    }

    /// Gradients given `d_price` (loss gradient w.r.t. the predicted price)
    /// and `d_weights`, an optional extra gradient on the gate weights.
    pub fn backward(&self, cache: &MoeCache, d_price: f64, d_weights: Option<&[f64]>) -> Result<MoeGrads> {
        let d_raw = d_price * self.output_scale;
        let w = &cache.gating.weights;
        let d = self.embedding.dim();
        let mut d_emb = vec![0.0; d];
        let mut experts: Vec<Option<Grads>> = vec![None; self.experts.len()];
        let mut d_w = vec![0.0; w.len()];
        for (e, y, ec) in &cache.experts {
            let b = self.experts[*e].backward(ec, &[w[*e] * d_raw])?;
            d_emb.iter_mut().zip(&b.input_grad).for_each(|(a, g)| *a += g);
            experts[*e] = Some(b.grads);
            d_w[*e] = y * d_raw;
        }
        if let Some(extra) = d_weights {
            for &e in &cache.gating.selected {
                d_w[e] += extra[e];
            }
        }
        // softmax over the selected logits only
        let dot: f64 = cache.gating.selected.iter().map(|&e| w[e] * d_w[e]).sum();
        let mut d_logits = vec![0.0; w.len()];
        for &e in &cache.gating.selected {
            d_logits[e] = w[e] * (d_w[e] - dot);
        }
        let gb = self.gate.backward(&cache.gate, &d_logits)?;
        d_emb.iter_mut().zip(&gb.input_grad).for_each(|(a, g)| *a += g);
        Ok(MoeGrads {
            embedding: self.embedding.backward(&cache.embed, &d_emb)?,
            gate: gb.grads,
            experts,
        })
    }

    /// All parameters as one flat vector: embedding, gate, then experts.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.embedding.tensors().concat();
        v.extend(self.gate.flatten());
        for e in &self.experts {
            v.extend(e.flatten());
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        let mut take = |t: &mut [f64]| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        };
        for t in self.embedding.tensors_mut() {
            take(t);
        }
        for t in self.gate.tensors_mut() {
            take(t);
        }
        for e in &mut self.experts {
            for t in e.tensors_mut() {
                take(t);
            }
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    pub fn embedding_param_count(&self) -> usize {
        self.embedding.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }
}

impl MoeGrads {
    pub fn add_assign(&mut self, other: &MoeGrads) {
        self.embedding.add_assign(&other.embedding);
        self.gate.add_assign(&other.gate);
        for (a, b) in self.experts.iter_mut().zip(&other.experts) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.embedding.scale(f);
        self.gate.scale(f);
        self.experts.iter_mut().flatten().for_each(|g| g.scale(f));
    }

    /// Dense flat layout matching [`MoeModel::flat_params`].
    pub fn flatten(&self, model: &MoeModel) -> Vec<f64> {
        let mut v = self.embedding.flatten(&model.embedding);
        v.extend(self.gate.flatten());
        for (g, m) in self.experts.iter().zip(&model.experts) {
            match g {
                Some(g) => v.extend(g.flatten()),
                None => v.extend(std::iter::repeat_n(0.0, m.num_params())),
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::embed::{SolitonEmbed, TableEmbed};
    use crate::nn::finite_diff_check;
    use crate::seeded_rng;
    use proptest::prelude::*;

    fn soliton_model(seed: u64, e: usize, k: usize) -> MoeModel {
        let mut rng = seeded_rng(seed, 0);
        let emb = SolitonEmbed::new(6, 5, 1.0 / 366.0, &mut rng).unwrap();
        let mut m = MoeModel::new(Embedding::Soliton(emb), e, k, 4, &mut rng).unwrap();
        m.output_shift = 3.0;
        m.output_scale = 2.0;
        m
    }

    fn table_model(seed: u64) -> MoeModel {
        let mut rng = seeded_rng(seed, 0);
        let emb = TableEmbed::new(3, &mut rng).unwrap();
        MoeModel::new(Embedding::Table(emb), 4, 2, 3, &mut rng).unwrap()
    }

    #[test]
    fn topk_examples() {
        let g = topk_softmax(&[2.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(g.weights, vec![1.0, 0.0, 0.0]);
        let g = topk_softmax(&[2.0, 1.0, 0.0], 2).unwrap();
        assert!((g.weights[0] - 0.731_058_6).abs() < 1e-6);
        assert!((g.weights[1] - 0.268_941_4).abs() < 1e-6);
        assert_eq!(g.weights[2], 0.0);
        let dense = topk_softmax(&[0.3, -1.0, 2.0], 3).unwrap();
        assert_eq!(dense.weights, softmax(&[0.3, -1.0, 2.0]));
        assert!(topk_softmax(&[1.0], 2).is_err());
        assert!(topk_softmax(&[1.0], 0).is_err());
        // ties go to the lower index
        assert_eq!(topk_softmax(&[1.0, 1.0, 1.0], 1).unwrap().selected, vec![0]);
    }

    proptest! {
        #[test]
        fn exactly_k_nonzero(logits in prop::collection::vec(-20.0f64..20.0, 1..10), k in 1usize..10) {
            let k = k.min(logits.len());
            let g = topk_softmax(&logits, k).unwrap();
            prop_assert_eq!(g.weights.iter().filter(|&&w| w > 0.0).count(), k);
            prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn k1_matches_selected_expert() {
        let m = soliton_model(1, 4, 1);
        for x in [0.0, 17.0, 200.5] {
            let (p, c) = m.forward_cached(x).unwrap();
            let emb = m.embedding.forward_cached(x).unwrap().0;
            let e = c.gating.selected[0];
            let y = m.experts[e].forward(&emb).unwrap()[0];
            assert!((p - (3.0 + 2.0 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_experts_ignore_gating() {
        let mut m = soliton_model(2, 5, 2);
        let first = m.experts[0].clone();
        m.experts.iter_mut().for_each(|e| *e = first.clone());
        let x = 123.0;
        let emb = m.embedding.forward_cached(x).unwrap().0;
        let y = first.forward(&emb).unwrap()[0];
        assert!((m.predict(x).unwrap() - (3.0 + 2.0 * y)).abs() < 1e-12);
    }

    #[test]
    fn prediction_matches_loop_oracle() {
        let m = soliton_model(3, 6, 2);
        let x = 44.25;
        let emb = m.embedding.forward_cached(x).unwrap().0;
        // logits by hand
        let gl = &m.gate.layers()[0];
        let logits: Vec<f64> = (0..6)
            .map(|o| {
                gl.bias[o]
                    + (0..emb.len())
                        .map(|i| gl.weight[o * emb.len() + i] * emb[i])
                        .sum::<f64>()
            })
            .collect();
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
        let (a, b) = (idx[0], idx[1]);
        let za = (logits[a] - logits[a]).exp();
        let zb = (logits[b] - logits[a]).exp();
        let expert = |e: usize| {
            let l = m.experts[e].layers();
            let h: Vec<f64> = (0..l[0].out_dim)
                .map(|o| {
                    let z = l[0].bias[o]
                        + (0..emb.len())
                            .map(|i| l[0].weight[o * emb.len() + i] * emb[i])
                            .sum::<f64>();
                    z.max(0.0)
                })
                .collect();
            l[1].bias[0] + h.iter().zip(&l[1].weight).map(|(h, w)| h * w).sum::<f64>()
        };
        let raw = (za * expert(a) + zb * expert(b)) / (za + zb);
        assert!((m.predict(x).unwrap() - (3.0 + 2.0 * raw)).abs() < 1e-12);
    }

    #[test]
    fn unselected_experts_get_no_gradient() {
        let m = soliton_model(4, 6, 2);
        let (_, c) = m.forward_cached(10.0).unwrap();
        let g = m.backward(&c, 1.0, None).unwrap();
        for (e, eg) in g.experts.iter().enumerate() {
            assert_eq!(eg.is_some(), c.gating.selected.contains(&e));
        }
        let flat_gate = &g.gate.layers[0];
        let d = m.embedding.dim();
        for e in 0..6 {
            if !c.gating.selected.contains(&e) {
                assert!(flat_gate.weight[e * d..(e + 1) * d].iter().all(|&v| v == 0.0));
                assert_eq!(flat_gate.bias[e], 0.0);
            }
        }
    }

    fn check_gradient(m: &MoeModel, xs: &[f64]) -> f64 {
        let target = 1.5;
        let mut grads: Option<MoeGrads> = None;
        for &x in xs {
            let (p, c) = m.forward_cached(x).unwrap();
            let g = m.backward(&c, 2.0 * (p - target), None).unwrap();
            match grads.as_mut() {
                Some(a) => a.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let analytic = grads.unwrap().flatten(m);
        let mut probe = m.clone();
        finite_diff_check(
            |flat| {
                probe.set_flat_params(flat);
                xs.iter().map(|&x| (probe.predict(x).unwrap() - target).powi(2)).sum()
            },
            &m.flat_params(),
            &analytic,
            1e-5,
        )
        .max_rel_error
    }

    #[test]
    fn soliton_moe_gradient_matches_finite_differences() {
        let m = soliton_model(5, 4, 2);
        let err = check_gradient(&m, &[3.0, 150.7, 301.2]);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn table_moe_gradient_matches_finite_differences() {
        let m = table_model(6);
        let err = check_gradient(&m, &[3.0, 150.0, 3.0]);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn extra_weight_gradient_matches_finite_differences() {
        // loss = Σ_e c_e · w_e(x); checks the softmax-over-selected backward alone
        let m = soliton_model(7, 5, 3);
        let coef = [0.5, -1.0, 2.0, 0.3, 1.1];
        let x = 77.0;
        let (_, c) = m.forward_cached(x).unwrap();
        let analytic = m.backward(&c, 0.0, Some(&coef)).unwrap().flatten(&m);
        let mut probe = m.clone();
        let err = finite_diff_check(
            |flat| {
                probe.set_flat_params(flat);
                let (_, c) = probe.forward_cached(x).unwrap();
                c.gating.weights.iter().zip(&coef).map(|(w, k)| w * k).sum()
            },
            &m.flat_params(),
            &analytic,
            1e-5,
        )
        .max_rel_error;
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = table_model(8);
        let mut f = m.flat_params();
        f.iter_mut().for_each(|v| *v += 1.0);
        m.set_flat_params(&f);
        assert_eq!(m.flat_params(), f);
    }
}
