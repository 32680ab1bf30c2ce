//! Best-day selling rule driven by a forecaster.

use std::collections::HashMap;

use super::moe::MoeModel;
use super::train::day_of_year;
use crate::agents::Policy;
use crate::env::{Action, Observation, TradingEnv};
use crate::{Error, Result, Rng};

/// Index of the highest forecast in `forecasts`; ties go to the earliest day.
pub fn best_day_index(forecasts: &[f64]) -> Result<usize> {
    if forecasts.is_empty() {
        return Err(Error::Contract("best-day window is empty".into()));
    }
    let mut best = 0;
    for (i, &f) in forecasts.iter().enumerate() {
        if f > forecasts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Forecasts every day in `window` and returns the index of the best one.
pub fn best_day_policy(model: &MoeModel, window: &[u32]) -> Result<usize> {
    let forecasts = window
        .iter()
        .map(|&d| model.predict(day_of_year(d) as f64))
        .collect::<Result<Vec<_>>>()?;
    best_day_index(&forecasts)
}

/// Holds until the forecast-best remaining day, sells on it, then re-plans.
///
/// Forecasts are computed once per episode day at construction, so acting is
/// a table lookup and the policy can be shared across threads.
#[derive(Debug, Clone)]
pub struct BestDayPolicy {
    forecasts: HashMap<u32, f64>,
}

impl BestDayPolicy {
    pub fn new(model: &MoeModel, days: &[u32]) -> Result<Self> {
        let forecasts = days
            .iter()
            .map(|&d| Ok((d, model.predict(day_of_year(d) as f64)?)))
            .collect::<Result<_>>()?;
        Ok(Self { forecasts })
    }

    /// Policy from known per-day values, e.g. true prices for an oracle.
    pub fn from_forecasts(forecasts: HashMap<u32, f64>) -> Self {
        Self { forecasts }
    }
}

impl Policy for BestDayPolicy {
    fn act(&self, env: &TradingEnv, _: &Observation, _: &mut Rng) -> Result<Action> {
        let window = env.remaining_days();
        let f = window
            .iter()
            .map(|d| {
                self.forecasts
                    .get(d)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("no forecast for day {d}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(if best_day_index(&f)? == 0 {
            Action::Sell
        } else {
            Action::Hold
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::run_episode;
    use crate::dataio::{Dataset, Provenance};
    use crate::dataio::{DayRecord, Normalizer};
    use crate::env::EnvConfig;
    use crate::seeded_rng;

    #[test]
    fn argmax_examples() {
        assert_eq!(best_day_index(&[4.0]).unwrap(), 0);
        assert_eq!(best_day_index(&[3.0, 9.0, 5.0]).unwrap(), 1);
        assert_eq!(best_day_index(&[2.0, 7.0, 7.0]).unwrap(), 1);
        assert!(best_day_index(&[]).is_err());
    }

    #[test]
    fn oracle_sells_at_the_peaks() {
        let prices = [3.0, 9.0, 5.0, 4.0];
        let days: Vec<DayRecord> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| DayRecord {
                day: i as u32,
                price: p,
                generation: 1.0,
            })
            .collect();
        let ds = Dataset::new(days.clone(), Provenance::Csv).unwrap();
        let env = TradingEnv::new(&days, Normalizer::fit(&ds).unwrap(), EnvConfig::default()).unwrap();
        let oracle = BestDayPolicy::from_forecasts(days.iter().map(|d| (d.day, d.price)).collect());
        let mut e = env.clone();
        let total = run_episode(&oracle, &mut e, &mut seeded_rng(0, 0)).unwrap();
        // hold day 0, sell 2 units on day 1, then 5 and 4 on the rest
        assert_eq!(total, 2.0 * 9.0 + 5.0 + 4.0);
    }
}
