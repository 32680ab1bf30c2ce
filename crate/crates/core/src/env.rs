//! Episodic hold/sell trading environment.
//!
//! One step per day. Each day's generation is added to storage before the
//! action resolves. Selling converts all stored energy to balance at the day's
//! price. Rewards are sparse: only sale steps earn
//! `max(0, previous reward - generated today + balance)`, and the last
//! nonzero reward is carried in the observation. On the final day any
//! remaining storage is liquidated regardless of the action.

use std::io::Write;
use std::path::Path;

use crate::dataio::{DayRecord, Normalizer};
use crate::{Error, Result};

/// Instantaneous panel power at the maximum-power point: `vmp · imp`.
pub fn wattage(vmp: f64, imp: f64) -> Result<f64> {
    if !(vmp >= 0.0 && imp >= 0.0) || !vmp.is_finite() || !imp.is_finite() {
        return Err(Error::Validation(format!(
            "wattage needs non-negative finite inputs, got vmp={vmp} imp={imp}"
        )));
    }
    Ok(vmp * imp)
}

/// Recurrent sale reward, clamped at zero.
pub fn compute_reward(prev_reward: f64, generated_today: f64, balance: f64) -> f64 {
    (prev_reward - generated_today + balance).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Hold = 0,
    Sell = 1,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Hold
        } else {
            Action::Sell
        }
    }
}

/// Normalized `[price, stored wattage, power generated, previous reward]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub price: f64,
    pub stored: f64,
    pub generated: f64,
    pub reward: f64,
}

impl Observation {
    pub const DIM: usize = 4;

    pub fn to_array(&self) -> [f64; 4] {
        [self.price, self.stored, self.generated, self.reward]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Which balance enters the reward on a sale step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BalanceTiming {
    Pre,
    #[default]
    Post,
}

impl std::str::FromStr for BalanceTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pre" => Ok(BalanceTiming::Pre),
            "post" => Ok(BalanceTiming::Post),
            other => Err(Error::Config(format!(
                "reward_balance_timing must be pre|post, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for BalanceTiming {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BalanceTiming::Pre => "pre",
            BalanceTiming::Post => "post",
        })
    }
}

/// Reward paid on a sale step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardKind {
    /// `max(0, previous reward - generated today + balance)`.
    #[default]
    Recurrent,
    /// Sale proceeds only (ablation; not the recurrent scheme).
    Proceeds,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "recurrent" => Ok(RewardKind::Recurrent),
            "proceeds" => Ok(RewardKind::Proceeds),
            other => Err(Error::Config(format!(
                "reward must be recurrent|proceeds, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardKind::Recurrent => "recurrent",
            RewardKind::Proceeds => "proceeds",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnvConfig {
    pub reward_balance_timing: BalanceTiming,
    pub reward: RewardKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub cursor: usize,
    pub stored: f64,
    pub balance: f64,
    pub prev_reward: f64,
    pub done: bool,
    pub total_generated: f64,
    pub total_sold: f64,
}

impl EnvState {
    fn initial() -> Self {
        Self {
            cursor: 0,
            stored: 0.0,
            balance: 0.0,
            prev_reward: 0.0,
            done: false,
            total_generated: 0.0,
            total_sold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Energy converted to balance on this step (0 when nothing was sold).
    pub sold: f64,
    /// The sale was the final-day liquidation overriding a hold.
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub price: f64,
    pub generation: f64,
    pub action: Action,
    pub stored: f64,
    pub balance: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct TradingEnv {
    days: Vec<DayRecord>,
    norm: Normalizer,
    config: EnvConfig,
    state: EnvState,
    trajectory: Option<Vec<TrajectoryRow>>,
}

impl TradingEnv {
    pub fn new(days: &[DayRecord], norm: Normalizer, config: EnvConfig) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Config("environment needs a non-empty day slice".into()));
        }
        Ok(Self {
            days: days.to_vec(),
            norm,
            config,
            state: EnvState::initial(),
            trajectory: None,
        })
    }

    /// Starts recording a [`TrajectoryRow`] per step (cleared on reset).
    pub fn record_trajectory(&mut self, on: bool) {
        self.trajectory = on.then(Vec::new);
    }

    pub fn trajectory(&self) -> Option<&[TrajectoryRow]> {
        self.trajectory.as_deref()
    }

    pub fn reset(&mut self) -> Observation {
        self.state = EnvState::initial();
        if let Some(t) = self.trajectory.as_mut() {
            t.clear();
        }
        self.observe()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn days(&self) -> &[DayRecord] {
        &self.days
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Day index (from the dataset) the next step acts on, or `None` when done.
    pub fn current_day(&self) -> Option<u32> {
        self.days.get(self.state.cursor).map(|d| d.day)
    }

    /// Day indices from the current one to the end of the episode.
    pub fn remaining_days(&self) -> Vec<u32> {
        self.days[self.state.cursor.min(self.days.len())..]
            .iter()
            .map(|d| d.day)
            .collect()
    }

    fn observe(&self) -> Observation {
        let idx = self.state.cursor.min(self.days.len() - 1);
        let day = &self.days[idx];
        Observation {
            price: self.norm.price(day.price),
            stored: self.norm.storage(self.state.stored),
            generated: self.norm.generation(day.generation),
            reward: self.norm.reward(self.state.prev_reward),
        }
    }

    pub fn step(&mut self, action: Action) -> Result<Step> {
        if self.state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let day = self.days[self.state.cursor];
        let last = self.state.cursor + 1 == self.days.len();
        let s = &mut self.state;

        s.stored += day.generation;
        s.total_generated += day.generation;

        let forced = last && action == Action::Hold && s.stored > 0.0;
        let mut reward = 0.0;
        let mut sold = 0.0;
        if (action == Action::Sell || forced) && s.stored > 0.0 {
            let pre = s.balance;
            sold = s.stored;
            s.balance += sold * day.price;
            s.total_sold += sold;
            s.stored = 0.0;
            let balance = match self.config.reward_balance_timing {
                BalanceTiming::Pre => pre,
                BalanceTiming::Post => s.balance,
            };
            reward = match self.config.reward {
                RewardKind::Recurrent => compute_reward(s.prev_reward, day.generation, balance),
                RewardKind::Proceeds => sold * day.price,
            };
        }
        if reward > 0.0 {
            s.prev_reward = reward;
        }

        if let Some(t) = self.trajectory.as_mut() {
            t.push(TrajectoryRow {
                step: s.cursor,
                price: day.price,
                generation: day.generation,
                action,
                stored: s.stored,
                balance: s.balance,
                reward,
            });
        }

        s.cursor += 1;
        s.done = s.cursor == self.days.len();
        let done = s.done;
        Ok(Step {
            observation: self.observe_after(done),
            reward,
            done,
            sold,
            forced,
        })
    }

    fn observe_after(&self, done: bool) -> Observation {
        let mut obs = self.observe();
        if done {
            obs.stored = 0.0;
        }
        obs
    }

    /// Final balance of a finished episode.
    pub fn episode_total(&self) -> Result<f64> {
        if !self.state.done {
            return Err(Error::Contract("episode_total called before the episode ended".into()));
        }
        Ok(self.state.balance)
    }
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path, header: &str) -> Result<()> {
    let mut s = String::from(header);
    s.push_str("step,price,generation,action,stored,balance,reward\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            r.price,
            r.generation,
            r.action.index(),
            r.stored,
            r.balance,
            r.reward
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(s.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Dataset, Provenance};

    fn env_from(prices: &[f64], gens: &[f64]) -> TradingEnv {
        let days: Vec<DayRecord> = prices
            .iter()
            .zip(gens)
            .enumerate()
            .map(|(i, (&price, &generation))| DayRecord {
                day: i as u32,
                price,
                generation,
            })
            .collect();
        let ds = Dataset::new(days, Provenance::Csv).unwrap();
        let norm = Normalizer::fit(&ds).unwrap();
        TradingEnv::new(ds.days(), norm, EnvConfig::default()).unwrap()
    }

    fn run(env: &mut TradingEnv, actions: &[Action]) -> f64 {
        env.reset();
        for &a in actions {
            env.step(a).unwrap();
        }
        env.episode_total().unwrap()
    }

    #[test]
    fn wattage_cases() {
        assert_eq!(wattage(5.0, 2.0).unwrap(), 10.0);
        assert_eq!(wattage(0.0, 123.0).unwrap(), 0.0);
        assert!(wattage(-1.0, 1.0).is_err());
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(0.0, 5.0, 3.0), 0.0);
        assert_eq!(compute_reward(10.0, 2.0, 4.0), 12.0);
        assert_eq!(compute_reward(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn reset_starts_clean_and_is_repeatable() {
        let mut env = env_from(&[2.0, 4.0, 3.0], &[1.0, 2.0, 3.0]);
        let a = env.reset();
        assert_eq!(a.reward, 0.0);
        assert_eq!(a.price, env.normalizer().price(2.0));
        assert_eq!(a.generated, env.normalizer().generation(1.0));
        env.step(Action::Sell).unwrap();
        assert_eq!(env.reset(), a);
        assert!(TradingEnv::new(&[], *env.normalizer(), EnvConfig::default()).is_err());
    }

    #[test]
    fn single_sell_converts_generation() {
        let mut env = env_from(&[3.0, 1.0], &[2.0, 1.0]);
        env.reset();
        let s = env.step(Action::Sell).unwrap();
        assert_eq!(env.state().balance, 6.0);
        assert_eq!(env.state().stored, 0.0);
        assert_eq!(s.sold, 2.0);
        // Post-sale balance: max(0, 0 - 2 + 6)
        assert_eq!(s.reward, 4.0);
    }

    #[test]
    fn hold_all_liquidates_on_last_day() {
        let gens = [1.5, 2.0, 0.5];
        let prices = [1.0, 2.0, 7.0];
        let mut env = env_from(&prices, &gens);
        env.reset();
        let r0 = env.step(Action::Hold).unwrap();
        let r1 = env.step(Action::Hold).unwrap();
        assert_eq!((r0.reward, r1.reward), (0.0, 0.0));
        let last = env.step(Action::Hold).unwrap();
        assert!(last.forced && last.done);
        assert_eq!(env.episode_total().unwrap(), (1.5 + 2.0 + 0.5) * 7.0);
        assert_eq!(env.state().stored, 0.0);
        assert!(env.step(Action::Sell).is_err());
    }

    #[test]
    fn prev_reward_survives_hold_gaps() {
        let mut env = env_from(&[2.0, 1.0, 1.0, 1.0], &[5.0, 1.0, 1.0, 1.0]);
        env.reset();
        let s = env.step(Action::Sell).unwrap();
        assert!(s.reward > 0.0);
        let h = env.step(Action::Hold).unwrap();
        assert_eq!(h.reward, 0.0);
        assert_eq!(env.state().prev_reward, s.reward);
        assert_eq!(h.observation.reward, env.normalizer().reward(s.reward));
    }

    #[test]
    fn pre_sale_balance_timing() {
        let days: Vec<DayRecord> = [(3.0, 2.0), (1.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(i, &(price, generation))| DayRecord {
                day: i as u32,
                price,
                generation,
            })
            .collect();
        let ds = Dataset::new(days, Provenance::Csv).unwrap();
        let cfg = EnvConfig {
            reward_balance_timing: BalanceTiming::Pre,
            ..EnvConfig::default()
        };
        let mut env = TradingEnv::new(ds.days(), Normalizer::fit(&ds).unwrap(), cfg).unwrap();
        env.reset();
        assert_eq!(env.step(Action::Sell).unwrap().reward, 0.0);
    }

    #[test]
    fn episode_totals_for_constant_and_rising_prices() {
        let mut env = env_from(&[1.0; 10], &[1.0; 10]);
        assert_eq!(run(&mut env, &[Action::Sell; 10]), 10.0);
        assert_eq!(run(&mut env, &[Action::Hold; 10]), 10.0);
        let rising: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut env = env_from(&rising, &[1.0; 10]);
        assert_eq!(run(&mut env, &[Action::Hold; 10]), 100.0);
        let mut early = env_from(&[1.0; 3], &[1.0; 3]);
        early.reset();
        assert!(early.episode_total().is_err());
    }

    proptest::proptest! {
        #[test]
        fn episodes_conserve_energy(
            days in proptest::collection::vec((0.5f64..80.0, 0.0f64..5.0, proptest::bool::ANY), 1..40)
        ) {
            let prices: Vec<f64> = days.iter().map(|d| d.0).collect();
            let gens: Vec<f64> = days.iter().map(|d| d.1).collect();
            let mut env = env_from(&prices, &gens);
            env.reset();
            let mut balance = 0.0;
            for d in &days {
                let step = env.step(if d.2 { Action::Sell } else { Action::Hold }).unwrap();
                proptest::prop_assert!(env.state().stored >= 0.0);
                proptest::prop_assert!(env.state().balance >= balance);
                proptest::prop_assert!(step.reward >= 0.0);
                proptest::prop_assert!(step.reward == 0.0 || step.sold > 0.0);
                balance = env.state().balance;
            }
            let s = env.state();
            proptest::prop_assert!(s.done);
            proptest::prop_assert_eq!(s.stored, 0.0);
            proptest::prop_assert!((s.total_sold - s.total_generated).abs() <= 1e-9 * s.total_generated.max(1.0));
        }
    }
}
