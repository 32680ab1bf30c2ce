//! Forecaster training: minibatch MSE with per-expert and row-sparse Adam.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::embed::{
    augment_long, EmbedGrads, Embedding, EmbeddingKind, SolitonEmbed, SolitonProfile, SolitonTail, TableEmbed,
};
use super::moe::{MoeGrads, MoeModel};
use crate::dataio::{mean_std, split_random, Dataset};
use crate::nn::{AdamConfig, AdamState, StepOutcome};
use crate::{seeded_rng, Error, Result};

/// Map a dataset day index onto a table row.
pub fn day_of_year(day: u32) -> u32 {
    day % 366
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeConfig {
    pub embedding: EmbeddingKind,
    pub dim: usize,
    pub experts: usize,
    pub k: usize,
    pub expert_hidden: usize,
    /// Hidden width of the soliton amplitude and phase networks.
    pub soliton_hidden: usize,
    /// Day inputs are multiplied by this before the soliton networks.
    pub input_scale: f64,
    pub soliton_tail: SolitonTail,
    pub soliton_profile: SolitonProfile,
    /// Float augmentation of training inputs; only used by the soliton embedding.
    pub augment: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the squared coefficient of variation of expert importance. 0 disables it.
    pub importance_coef: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingKind::Soliton,
            dim: 128,
            experts: 6,
            k: 2,
            expert_hidden: 64,
            soliton_hidden: 32,
            input_scale: 1.0 / 366.0,
            soliton_tail: SolitonTail::SinOfRatio,
            soliton_profile: SolitonProfile::Trig,
            augment: true,
            epochs: 2000,
            lr: 1e-3,
            batch_size: 32,
            importance_coef: 0.0,
            test_fraction: 0.3,
            seed: 42,
        }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.expert_hidden == 0 || self.soliton_hidden == 0 {
            return bad("forecaster widths must be positive".into());
        }
        if self.experts == 0 || self.k == 0 || self.k > self.experts {
            return bad(format!(
                "need 1 ≤ k ≤ experts, got k = {}, experts = {}",
                self.k, self.experts
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad(format!("input scale must be positive, got {}", self.input_scale));
        }
        if !(self.importance_coef >= 0.0 && self.importance_coef.is_finite()) {
            return bad(format!(
                "importance coefficient must be ≥ 0, got {}",
                self.importance_coef
            ));
        }
        Ok(())
    }

    /// Untrained model with the configured architecture.
    pub fn build(&self) -> Result<MoeModel> {
        self.validate()?;
        let mut rng = seeded_rng(self.seed, 0);
        let embedding = match self.embedding {
            EmbeddingKind::Table => Embedding::Table(TableEmbed::new(self.dim, &mut rng)?),
            EmbeddingKind::Soliton => {
                let mut s = SolitonEmbed::new(self.dim, self.soliton_hidden, self.input_scale, &mut rng)?;
                s.tail = self.soliton_tail;
                s.profile = self.soliton_profile;
                Embedding::Soliton(s)
            }
        };
        MoeModel::new(embedding, self.experts, self.k, self.expert_hidden, &mut rng)
    }
}

/// Adam with moments and step counts kept per table row, so rows that
/// receive no gradient are left exactly as they were.
#[derive(Debug, Clone)]
pub struct RowSparseAdam {
    config: AdamConfig,
    dim: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u64>,
}

impl RowSparseAdam {
    pub fn new(config: AdamConfig, table: &TableEmbed) -> Self {
        let n = table.table().len();
        Self {
            config,
            dim: table.dim(),
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: vec![0; n / table.dim()],
        }
    }

    pub fn update(&mut self, table: &mut TableEmbed, rows: &BTreeMap<usize, Vec<f64>>) -> StepOutcome {
        if !rows.values().all(|g| g.iter().all(|v| v.is_finite())) {
            log::warn!("adam: non-finite table gradient, update skipped");
            return StepOutcome::SkippedNonFinite;
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let params = table.table_mut();
        for (&row, g) in rows {
            self.steps[row] += 1;
            let t = self.steps[row] as i32;
            let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for (j, &gj) in g.iter().enumerate() {
                let i = row * self.dim + j;
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * gj;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * gj * gj;
                params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}

enum EmbedOpt {
    Table(RowSparseAdam),
    Soliton { amplitude: AdamState, phase: AdamState },
}

/// Optimizer state for a whole [`MoeModel`]. Each expert has its own Adam
/// state and is only stepped when it was selected at least once in the batch.
pub struct MoeOptimizer {
    embed: EmbedOpt,
    gate: AdamState,
    experts: Vec<AdamState>,
}

impl MoeOptimizer {
    pub fn new(config: AdamConfig, model: &MoeModel) -> Self {
        let embed = match &model.embedding {
            Embedding::Table(t) => EmbedOpt::Table(RowSparseAdam::new(config, t)),
            Embedding::Soliton(s) => EmbedOpt::Soliton {
                amplitude: AdamState::new(config, &s.amplitude),
                phase: AdamState::new(config, &s.phase),
            },
        };
        Self {
            embed,
            gate: AdamState::new(config, &model.gate),
            experts: model.experts.iter().map(|e| AdamState::new(config, e)).collect(),
        }
    }

    pub fn step(&mut self, model: &mut MoeModel, grads: &MoeGrads) -> Result<()> {
        match (&mut self.embed, &mut model.embedding, &grads.embedding) {
            (EmbedOpt::Table(opt), Embedding::Table(t), EmbedGrads::Table(rows)) => {
                opt.update(t, rows);
            }
            (EmbedOpt::Soliton { amplitude, phase }, Embedding::Soliton(s), EmbedGrads::Soliton(g)) => {
                amplitude.update(&mut s.amplitude, &g.amplitude)?;
                phase.update(&mut s.phase, &g.phase)?;
            }
            _ => return Err(Error::Contract("optimizer and model embeddings differ".into())),
        }
        self.gate.update(&mut model.gate, &grads.gate)?;
        for ((opt, expert), g) in self.experts.iter_mut().zip(&mut model.experts).zip(&grads.experts) {
            if let Some(g) = g {
                opt.update(expert, g)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoeReport {
    /// Mean squared error on the training split, un-augmented inputs, price units.
    pub train_mse: f64,
    /// Mean squared error over the final epoch's augmented training inputs.
    pub train_mse_augmented: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedMoe {
    pub model: MoeModel,
    pub report: MoeReport,
}

/// Trains on a seeded random split of `dataset` (the forecaster's own split).
pub fn train_moe(dataset: &Dataset, cfg: &MoeConfig) -> Result<TrainedMoe> {
    let (train, test) = split_random(dataset, cfg.test_fraction, cfg.seed)?;
    train_moe_on(&train, &test, cfg)
}

/// Mean squared error of `model` over `data` with un-augmented inputs.
pub fn forecast_mse(model: &MoeModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("cannot score an empty split".into()));
    }
    let mut sum = 0.0;
    for d in data.days() {
        let e = model.predict(day_of_year(d.day) as f64)? - d.price;
        sum += e * e;
    }
    Ok(sum / data.len() as f64)
}

/// Trains on explicit train and test splits.
pub fn train_moe_on(train: &Dataset, test: &Dataset, cfg: &MoeConfig) -> Result<TrainedMoe> {
    let mut model = cfg.build()?;
    if train.is_empty() {
        return Err(Error::Validation("forecaster training split is empty".into()));
    }
    let (mean, std) = mean_std(&train.prices());
    model.output_shift = mean;
    model.output_scale = if std > 0.0 { std } else { 1.0 };
    let inv_var = 1.0 / (model.output_scale * model.output_scale);

    let mut opt = MoeOptimizer::new(AdamConfig::with_lr(cfg.lr), &model);
    let mut shuffle_rng = seeded_rng(cfg.seed, 1);
    let mut aug_rng = seeded_rng(cfg.seed, 2);
    let augment = cfg.augment && cfg.embedding == EmbeddingKind::Soliton;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_sse = f64::NAN;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let mut fwd = Vec::with_capacity(batch.len());
            for &i in batch {
                let rec = train.days()[i];
                let doy = day_of_year(rec.day);
                let x = if augment {
                    augment_long(doy, &mut aug_rng)
                } else {
                    doy as f64
                };
                let (p, cache) = model.forward_cached(x)?;
                fwd.push((p - rec.price, cache));
            }
            let d_weights = importance_grad(
                &fwd.iter().map(|f| &f.1.gating.weights).collect::<Vec<_>>(),
                cfg.importance_coef,
            );
            let mut grads: Option<MoeGrads> = None;
            for (err, cache) in &fwd {
                sse += err * err;
                let g = model.backward(cache, 2.0 * err * inv_var / b, d_weights.as_deref())?;
                match grads.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => grads = Some(g),
                }
            }
            if !sse.is_finite() {
                return Err(Error::Divergence(format!(
                    "forecaster loss became non-finite in epoch {epoch}"
                )));
            }
            opt.step(&mut model, &grads.expect("non-empty batch"))?;
        }
        epoch_sse = sse;
    }
    if !model.is_finite() {
        return Err(Error::Divergence("forecaster parameters became non-finite".into()));
    }
    let train_mse = forecast_mse(&model, train)?;
    let test_rmse = if test.is_empty() {
        f64::NAN
    } else {
        forecast_mse(&model, test)?.sqrt()
    };
    Ok(TrainedMoe {
        model,
        report: MoeReport {
            train_mse,
            train_mse_augmented: epoch_sse / train.len() as f64,
            test_rmse,
        },
    })
}

/// Gradient of `coef · CV(importance)²` with respect to each sample's gate
/// weights, where importance is the per-expert sum of weights over the batch.
/// Every sample gets the same vector, so one is returned.
fn importance_grad(weights: &[&Vec<f64>], coef: f64) -> Option<Vec<f64>> {
    if coef == 0.0 || weights.is_empty() {
        return None;
    }
    let e = weights[0].len();
    let mut imp = vec![0.0; e];
    for w in weights {
        imp.iter_mut().zip(w.iter()).for_each(|(a, b)| *a += b);
    }
    let n = e as f64;
    let m = imp.iter().sum::<f64>() / n;
    let var = imp.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    Some(
        imp.iter()
            .map(|v| coef * (2.0 * (v - m) / (n * m * m) - 2.0 * var / (n * m * m * m)))
            .collect(),
    )
}
