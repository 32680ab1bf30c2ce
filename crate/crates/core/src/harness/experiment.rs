//! The full protocol: data, splits, training, evaluation of every agent.

use rand::RngCore;

use super::config::{DataSource, ExperimentConfig};
use crate::agents::{evaluate, train_with_snapshots, EvalResult, PpoPolicy, RandomPolicy, SellOnly};
use crate::dataio::{
    aggregate_daily, join_days, load_prices_csv, load_solar_csv, read_dataset_csv, split_chronological, synth_dataset,
    Dataset, Normalizer,
};
use crate::env::TradingEnv;
use crate::forecast::{
    day_of_year, train_moe, train_moe_on, BestDayPolicy, EmbeddingKind, MoeConfig, MoeModel, MoeReport,
};
use crate::{seeded_rng, Result};

/// Reference means of the five agents in the original study, in column order.
pub const REFERENCE_MEANS: [f64; 5] = [14.60367, 14.5, 15.55, 16.336, 21.61233];

/// Reference forecaster losses `(experts, train MSE, test RMSE)` for
/// table embeddings with 64-unit experts and the untuned soliton embedding.
pub const REFERENCE_TABLE_LOSSES: [(usize, f64, f64); 3] =
    [(2, 85.9594, 9.0421), (4, 96.0857, 8.3847), (6, 98.2492, 10.7752)];
pub const REFERENCE_SOLITON_LOSS: (usize, f64, f64) = (6, 115.0481, 8.1353);

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResult {
    pub name: String,
    pub totals: Vec<f64>,
    pub mean: f64,
    pub reference_mean: Option<f64>,
}

impl AgentResult {
    fn new(name: String, eval: EvalResult, reference_mean: Option<f64>) -> Self {
        Self {
            name,
            totals: eval.totals,
            mean: eval.mean,
            reference_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub embedding: EmbeddingKind,
    pub experts: usize,
    pub k: usize,
    pub dim: usize,
    pub report: MoeReport,
    pub reference: Option<(f64, f64)>,
}

impl EmbeddingRow {
    /// `test RMSE - sqrt(train MSE)`: how much worse the model does on unseen days.
    pub fn generalization_gap(&self) -> f64 {
        self.report.test_rmse - self.report.train_mse.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakFreeResult {
    pub report: MoeReport,
    pub eval: EvalResult,
}

/// Everything an experiment produces. Fields fill in stage order, so a
/// failed run still carries the stages that finished.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub config_hash: String,
    pub seed: u64,
    /// Column order: MoE, sell-only, random, short PPO, long PPO.
    pub agents: Vec<AgentResult>,
    /// Mean rollout total per PPO training epoch.
    pub curve: Vec<f64>,
    pub embeddings: Vec<EmbeddingRow>,
    pub leak_free: Option<LeakFreeResult>,
    /// `(day, actual, predicted)` over the whole dataset for the MoE agent's forecaster.
    pub forecast_audit: Vec<(u32, f64, f64)>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl ResultsTable {
    pub fn agent(&self, name: &str) -> Option<&AgentResult> {
        self.agents.iter().find(|a| a.name == name)
    }
}

/// Independent seed for a named purpose, derived from the master seed.
pub fn derive_seed(master: u64, purpose: u64) -> u64 {
    seeded_rng(master, 0xC0FF_EE00 + purpose).next_u64()
}

/// Evaluation seed for the agent in result column `column` (0 = MoE … 4 = long PPO, 5 = leak-free MoE).
pub fn agent_eval_seed(master: u64, column: u64) -> u64 {
    derive_seed(master, 10 + column)
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic { days, seed, params } => synth_dataset(*days, *seed, params),
        DataSource::Csv {
            solar,
            prices,
            missing_generation_is_zero,
        } => {
            let gen = aggregate_daily(&load_solar_csv(solar)?);
            join_days(&gen, &load_prices_csv(prices)?, *missing_generation_is_zero)
        }
        DataSource::Dataset { path } => read_dataset_csv(path),
    }
}

/// Chronological split plus train/test environments sharing a train-fitted normalizer.
pub fn build_envs(data: &Dataset, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, TradingEnv, TradingEnv)> {
    let (train, test) = split_chronological(data, cfg.env_test_fraction)?;
    let norm = Normalizer::fit(&train)?;
    let train_env = TradingEnv::new(train.days(), norm, cfg.env)?;
    let test_env = TradingEnv::new(test.days(), norm, cfg.env)?;
    Ok((train, test, train_env, test_env))
}

fn moe_config(cfg: &ExperimentConfig) -> MoeConfig {
    MoeConfig {
        seed: cfg.seed,
        ..cfg.moe.clone()
    }
}

fn best_day(model: &MoeModel, env: &TradingEnv) -> Result<BestDayPolicy> {
    BestDayPolicy::new(model, &env.days().iter().map(|d| d.day).collect::<Vec<_>>())
}

/// Runs every stage. On failure the returned error names the stage, and
/// `partial` holds whatever finished before it.
pub fn run_experiment_into(cfg: &ExperimentConfig, partial: &mut ResultsTable) -> Result<()> {
    cfg.validate()?;
    partial.config_hash = cfg.hash();
    partial.seed = cfg.seed;
    partial.started_unix = unix_now();

    let data = load_data(&cfg.data).map_err(|e| e.in_stage("data"))?;
    log::info!("loaded {} days", data.len());
    let (train, test, train_env, test_env) = build_envs(&data, cfg).map_err(|e| e.in_stage("split"))?;

    // forecasters: the comparison rows, then the agent's own model
    let base = moe_config(cfg);
    let mut variants: Vec<MoeConfig> = cfg
        .compare_table_experts
        .iter()
        .map(|&e| MoeConfig {
            embedding: EmbeddingKind::Table,
            experts: e,
            ..base.clone()
        })
        .collect();
    variants.push(MoeConfig {
        embedding: EmbeddingKind::Soliton,
        ..base.clone()
    });
    let mut agent_model = None;
    for v in &variants {
        log::info!("training {} forecaster with {} experts", v.embedding, v.experts);
        let trained = train_moe(&data, v).map_err(|e| e.in_stage("forecaster"))?;
        let reference = match v.embedding {
            EmbeddingKind::Table => REFERENCE_TABLE_LOSSES
                .iter()
                .find(|r| r.0 == v.experts)
                .map(|r| (r.1, r.2)),
            EmbeddingKind::Soliton => {
                (v.experts == REFERENCE_SOLITON_LOSS.0).then_some((REFERENCE_SOLITON_LOSS.1, REFERENCE_SOLITON_LOSS.2))
            }
        };
        partial.embeddings.push(EmbeddingRow {
            embedding: v.embedding,
            experts: v.experts,
            k: v.k,
            dim: v.dim,
            report: trained.report,
            reference,
        });
        if *v == base && agent_model.is_none() {
            agent_model = Some(trained.model);
        }
    }
    let moe = match agent_model {
        Some(m) => m,
        None => train_moe(&data, &base).map_err(|e| e.in_stage("forecaster"))?.model,
    };
    partial.forecast_audit = data
        .days()
        .iter()
        .map(|d| Ok((d.day, d.price, moe.predict(day_of_year(d.day) as f64)?)))
        .collect::<Result<_>>()?;

    // PPO: the short agent is a snapshot of the long run
    let ppo_cfg = crate::agents::PpoConfig {
        seed: cfg.seed,
        ..cfg.ppo.clone()
    };
    log::info!("training PPO for {} epochs", ppo_cfg.epochs);
    let out = train_with_snapshots(&train_env, &ppo_cfg, &[cfg.ppo_short_epochs]).map_err(|e| e.in_stage("ppo"))?;
    partial.curve = out.curve;
    let short = out.snapshots.into_iter().next().expect("snapshot requested").1;

    let eval = |policy: &dyn crate::agents::Policy, n: usize, tag: u64| {
        evaluate(policy, &test_env, n, agent_eval_seed(cfg.seed, tag)).map_err(|e| e.in_stage("evaluate"))
    };
    log::info!("evaluating agents on {} test days", test_env.len());
    let ep = cfg.episodes;
    let moe_policy = best_day(&moe, &test_env)?;
    partial.agents.push(AgentResult::new(
        "MoE".into(),
        eval(&moe_policy, ep.moe, 0)?,
        Some(REFERENCE_MEANS[0]),
    ));
    partial.agents.push(AgentResult::new(
        "SellOnly".into(),
        eval(&SellOnly, ep.sell_only, 1)?,
        Some(REFERENCE_MEANS[1]),
    ));
    partial.agents.push(AgentResult::new(
        "Random".into(),
        eval(&RandomPolicy, ep.random, 2)?,
        Some(REFERENCE_MEANS[2]),
    ));
    let (ref_short, ref_long) = match (cfg.ppo_short_epochs, cfg.ppo.epochs) {
        (30, 1000) => (Some(REFERENCE_MEANS[3]), Some(REFERENCE_MEANS[4])),
        _ => (None, None),
    };
    let short_policy = PpoPolicy {
        actor: short.actor,
        greedy: cfg.ppo_greedy,
    };
    partial.agents.push(AgentResult::new(
        format!("PPO-{}", cfg.ppo_short_epochs),
        eval(&short_policy, ep.ppo, 3)?,
        ref_short,
    ));
    let long_policy = PpoPolicy {
        actor: out.agent.actor,
        greedy: cfg.ppo_greedy,
    };
    partial.agents.push(AgentResult::new(
        format!("PPO-{}", cfg.ppo.epochs),
        eval(&long_policy, ep.ppo, 4)?,
        ref_long,
    ));

    if cfg.leak_free {
        // forecaster sees only the environment's training days
        let trained = train_moe_on(&train, &test, &base).map_err(|e| e.in_stage("leak-free forecaster"))?;
        let policy = best_day(&trained.model, &test_env)?;
        partial.leak_free = Some(LeakFreeResult {
            report: trained.report,
            eval: eval(&policy, ep.moe, 5)?,
        });
    }
    partial.finished_unix = unix_now();
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let mut table = ResultsTable::default();
    run_experiment_into(cfg, &mut table)?;
    Ok(table)
}
