//! Finite-difference checks for every trainable network at default sizes.

use crate::agents::{collect_rollout, ppo_loss, PpoAgent, PpoConfig};
use crate::dataio::{synth_dataset, Normalizer, SynthParams};
use crate::env::{EnvConfig, TradingEnv};
use crate::forecast::{EmbeddingKind, MoeConfig, MoeGrads, MoeModel};
use crate::nn::{finite_diff_check, GradCheckReport, ParamTensors};
use crate::{seeded_rng, Result};

/// Maximum relative error accepted by the suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Checks `flat[indices]` only, holding every other parameter fixed.
fn check_subset(
    mut loss: impl FnMut(&[f64]) -> f64,
    flat: &[f64],
    analytic: &[f64],
    indices: &[usize],
) -> GradCheckReport {
    let sub: Vec<f64> = indices.iter().map(|&i| flat[i]).collect();
    let sub_grad: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
    let mut full = flat.to_vec();
    let mut report = finite_diff_check(
        |s| {
            for (&i, &v) in indices.iter().zip(s) {
                full[i] = v;
            }
            loss(&full)
        },
        &sub,
        &sub_grad,
        GRADCHECK_STEP,
    );
    report.worst_index = indices.get(report.worst_index).copied().unwrap_or(0);
    report
}

fn ppo_cases(seed: u64) -> Result<Vec<GradCheckCase>> {
    let data = synth_dataset(20, seed, &SynthParams::default())?;
    let mut env = TradingEnv::new(data.days(), Normalizer::fit(&data)?, EnvConfig::default())?;
    let cfg = PpoConfig::default();
    let mut agent = PpoAgent::new(&cfg, &mut seeded_rng(seed, 0))?;
    let mut buf = collect_rollout(&mut env, &agent, &mut seeded_rng(seed, 1), false)?;
    buf.compute_advantages(&PpoConfig {
        reward_scale: 1e4,
        ..cfg.clone()
    })?;
    // move off π = π_old so ratios differ from 1, and give the critic output weight
    for l in agent.actor.layers_mut() {
        for (i, w) in l.weight.iter_mut().enumerate() {
            *w += 0.05 * ((i % 7) as f64 - 3.0) / 3.0;
        }
    }
    for (i, w) in agent
        .critic
        .layers_mut()
        .last_mut()
        .unwrap()
        .weight
        .iter_mut()
        .enumerate()
    {
        *w = 0.02 * ((i % 5) as f64 - 2.0);
    }
    let idx: Vec<usize> = (0..buf.len()).collect();
    let loss = ppo_loss(&buf, &idx, &agent, cfg.clip, cfg.entropy_coef)?;

    let mut probe = agent.clone();
    let actor = finite_diff_check(
        |flat| {
            probe.actor.unflatten(flat);
            ppo_loss(&buf, &idx, &probe, cfg.clip, cfg.entropy_coef)
                .map(|l| l.policy_loss)
                .unwrap_or(f64::NAN)
        },
        &agent.actor.flatten(),
        &loss.actor_grads.flatten(),
        GRADCHECK_STEP,
    );
    let mut probe = agent.clone();
    let critic = finite_diff_check(
        |flat| {
            probe.critic.unflatten(flat);
            ppo_loss(&buf, &idx, &probe, cfg.clip, cfg.entropy_coef)
                .map(|l| l.value_loss)
                .unwrap_or(f64::NAN)
        },
        &agent.critic.flatten(),
        &loss.critic_grads.flatten(),
        GRADCHECK_STEP,
    );
    Ok(vec![
        GradCheckCase {
            name: "actor",
            report: actor,
        },
        GradCheckCase {
            name: "critic",
            report: critic,
        },
    ])
}

/// Squared-error loss over a few inputs, and its analytic gradient.
fn moe_loss_and_grad(model: &MoeModel, xs: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let mut total: Option<MoeGrads> = None;
    for (&x, &t) in xs.iter().zip(targets) {
        let (p, cache) = model.forward_cached(x)?;
        let g = model.backward(&cache, 2.0 * (p - t), None)?;
        match total.as_mut() {
            Some(a) => a.add_assign(&g),
            None => total = Some(g),
        }
    }
    Ok(total.expect("at least one input").flatten(model))
}

/// Distance of input `x` from the loss's non-differentiable points: the
/// smallest |pre-activation| of a relu unit in a selected expert, and the
/// logit gap at the top-k boundary.
fn kink_margin(model: &MoeModel, x: f64) -> Result<f64> {
    let (_, cache) = model.forward_cached(x)?;
    let (emb, _) = model.embedding.forward_cached(x)?;
    let logits = model.gate.forward(&emb)?;
    let mut margin = f64::INFINITY;
    if model.k < logits.len() {
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        margin = sorted[model.k - 1] - sorted[model.k];
    }
    for &e in &cache.gating.selected {
        let l = &model.experts[e].layers()[0];
        for (b, row) in l.bias.iter().zip(l.weight.chunks_exact(l.in_dim)) {
            let z = b + row.iter().zip(&emb).map(|(w, v)| w * v).sum::<f64>();
            margin = margin.min(z.abs());
        }
    }
    Ok(margin)
}

/// Minimum kink margin for a check input.
const KINK_MARGIN: f64 = 1e-3;

fn moe_cases(seed: u64, kind: EmbeddingKind) -> Result<Vec<GradCheckCase>> {
    let cfg = MoeConfig {
        embedding: kind,
        seed,
        ..MoeConfig::default()
    };
    let mut model = cfg.build()?;
    model.output_shift = 30.0;
    model.output_scale = 8.0;
    // the loss is piecewise smooth; check it at inputs clear of the seams
    let mut xs = Vec::new();
    for day in (12..366).step_by(37) {
        if kink_margin(&model, day as f64)? > KINK_MARGIN {
            xs.push(day as f64);
        }
        if xs.len() == 2 {
            break;
        }
    }
    if xs.is_empty() {
        return Err(crate::Error::Contract(
            "no gradient-check input clear of relu and top-k seams".into(),
        ));
    }
    let targets: Vec<f64> = xs.iter().map(|x| 25.0 + x / 20.0).collect();
    let analytic = moe_loss_and_grad(&model, &xs, &targets)?;
    let xs = &xs[..];
    let targets = &targets[..];
    let flat = model.flat_params();
    let mut probe = model.clone();
    let mut loss = |f: &[f64]| {
        probe.set_flat_params(f);
        xs.iter()
            .zip(targets)
            .map(|(&x, &t)| probe.predict(x).map(|p| (p - t) * (p - t)).unwrap_or(f64::NAN))
            .sum::<f64>()
    };

    let n_embed: usize = model.embedding_param_count();
    let n_gate = model.gate.num_params();
    let embed_idx: Vec<usize> = match kind {
        // only rows that the inputs touch can have a nonzero gradient
        EmbeddingKind::Table => xs
            .iter()
            .flat_map(|&x| {
                let r = x as usize * cfg.dim;
                r..r + cfg.dim
            })
            .collect(),
        EmbeddingKind::Soliton => (0..n_embed).collect(),
    };
    let mut cases = vec![GradCheckCase {
        name: match kind {
            EmbeddingKind::Table => "table embedding",
            EmbeddingKind::Soliton => "soliton embedding",
        },
        report: check_subset(&mut loss, &flat, &analytic, &embed_idx),
    }];
    if kind == EmbeddingKind::Soliton {
        let gate_idx: Vec<usize> = (n_embed..n_embed + n_gate).collect();
        let expert_idx: Vec<usize> = (n_embed + n_gate..flat.len()).collect();
        cases.push(GradCheckCase {
            name: "gate",
            report: check_subset(&mut loss, &flat, &analytic, &gate_idx),
        });
        cases.push(GradCheckCase {
            name: "experts",
            report: check_subset(&mut loss, &flat, &analytic, &expert_idx),
        });
    }
    Ok(cases)
}

/// Actor, critic, gate, experts and both embeddings at their default sizes.
pub fn run_gradcheck_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut cases = ppo_cases(seed)?;
    cases.extend(moe_cases(seed, EmbeddingKind::Soliton)?);
    cases.extend(moe_cases(seed, EmbeddingKind::Table)?);
    Ok(cases)
}
