//! Trading agents and the shared evaluation loop.

mod gae;
mod ppo;

use rand::Rng as _;
use rayon::prelude::*;

pub use gae::{gae, gae_with_form, normalize_advantages, td_residuals, GaeForm};
pub use ppo::{
    actor_forward, clipped_surrogate, collect_rollout, critic_forward, greedy_action, ppo_loss, train,
    train_with_snapshots, PpoAgent, PpoConfig, PpoLoss, PpoPolicy, RolloutBuffer, TrainOutput, Transition,
};

use crate::env::{Action, Observation, TradingEnv};
use crate::{seeded_rng, Error, Result, Rng};

/// A decision rule over the trading environment.
///
/// Policies are immutable while acting so one instance can drive several
/// episodes concurrently; `env` exposes the current day and remaining window.
pub trait Policy: Send + Sync {
    fn act(&self, env: &TradingEnv, obs: &Observation, rng: &mut Rng) -> Result<Action>;
}

/// Sells every day.
#[derive(Debug, Clone, Copy, Default)]
pub struct SellOnly;

pub fn sell_only_policy() -> Action {
    Action::Sell
}

impl Policy for SellOnly {
    fn act(&self, _: &TradingEnv, _: &Observation, _: &mut Rng) -> Result<Action> {
        Ok(sell_only_policy())
    }
}

/// Uniform over hold and sell.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

pub fn random_policy(rng: &mut Rng) -> Action {
    if rng.random::<bool>() {
        Action::Sell
    } else {
        Action::Hold
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _: &TradingEnv, _: &Observation, rng: &mut Rng) -> Result<Action> {
        Ok(random_policy(rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub totals: Vec<f64>,
    pub mean: f64,
}

/// Runs one episode and returns its final balance.
pub fn run_episode(policy: &dyn Policy, env: &mut TradingEnv, rng: &mut Rng) -> Result<f64> {
    let mut obs = env.reset();
    loop {
        let action = policy.act(env, &obs, rng)?;
        let step = env.step(action)?;
        if step.done {
            return env.episode_total();
        }
        obs = step.observation;
    }
}

/// Evaluates `policy` for `episodes` episodes. Episode `i` uses substream
/// `i` of `seed`, so results do not depend on thread scheduling.
pub fn evaluate(policy: &dyn Policy, env: &TradingEnv, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let totals = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = env.clone();
            let mut rng = seeded_rng(seed, i as u64);
            run_episode(policy, &mut env, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    Ok(EvalResult { totals, mean })
}
