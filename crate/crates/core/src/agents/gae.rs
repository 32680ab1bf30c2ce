use crate::{Error, Result};

/// Which advantage estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaeForm {
    /// Full-horizon exponentially weighted sum of TD residuals.
    #[default]
    Standard,
    /// Two-term truncation `δ_t + γλ·δ_{t+1}`.
    Truncated2,
}

impl std::str::FromStr for GaeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "standard" => Ok(GaeForm::Standard),
            "truncated2" => Ok(GaeForm::Truncated2),
            other => Err(Error::Config(format!(
                "gae_form must be standard|truncated2, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for GaeForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GaeForm::Standard => "standard",
            GaeForm::Truncated2 => "truncated2",
        })
    }
}

/// Temporal-difference residuals with a zero bootstrap after terminal steps
/// and after the end of the sequence.
pub fn td_residuals(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let next = if dones[t] || t + 1 == n { 0.0 } else { values[t + 1] };
            rewards[t] + gamma * next - values[t]
        })
        .collect()
}

/// Advantages and returns (`advantage + value`) in one reverse sweep.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    gae_with_form(rewards, values, dones, gamma, lambda, GaeForm::Standard)
}

pub fn gae_with_form(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
    form: GaeForm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Contract(format!(
            "gae: {} rewards, {} values, {} done flags",
            n,
            values.len(),
            dones.len()
        )));
    }
    let delta = td_residuals(rewards, values, dones, gamma);
    let decay = gamma * lambda;
    let mut adv = vec![0.0; n];
    match form {
        GaeForm::Standard => {
            let mut acc = 0.0;
            for t in (0..n).rev() {
                if dones[t] {
                    acc = 0.0;
                }
                acc = delta[t] + decay * acc;
                adv[t] = acc;
            }
        }
        GaeForm::Truncated2 => {
            for t in 0..n {
                let next = if dones[t] || t + 1 == n { 0.0 } else { delta[t + 1] };
                adv[t] = delta[t] + decay * next;
            }
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// Buffers of length ≤ 1, or with zero spread, are only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= mean);
    let std = (adv.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    if adv.len() > 1 && std > 1e-12 {
        adv.iter_mut().for_each(|a| *a /= std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let (a, r) = gae(&[1.0], &[0.0], &[true], 0.99, 0.95).unwrap();
        assert_eq!((a, r), (vec![1.0], vec![1.0]));
    }

    #[test]
    fn zero_discount_is_one_step_residual() {
        let rewards = [1.0, 0.0, 3.0, 2.0];
        let values = [0.5, -0.2, 1.0, 4.0];
        let (a, _) = gae(&rewards, &values, &[false, false, false, true], 0.0, 0.9).unwrap();
        for t in 0..4 {
            assert_eq!(a[t], rewards[t] - values[t]);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(gae(&[1.0], &[], &[true], 0.9, 0.9), Err(Error::Contract(_))));
    }

    #[test]
    fn truncated_form_uses_two_terms() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.0; 3];
        let (a, _) = gae_with_form(&r, &v, &[false, false, true], 0.5, 0.5, GaeForm::Truncated2).unwrap();
        assert_eq!(a, vec![1.0 + 0.25 * 2.0, 2.0 + 0.25 * 3.0, 3.0]);
    }

    #[test]
    fn normalization_moments() {
        let mut a = vec![3.0, -1.0, 4.0, 1.5, 9.0];
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn lambda_one_gives_discounted_returns(
            steps in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
            gamma in 0.5f64..1.0,
        ) {
            let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
            let mut dones = vec![false; r.len()];
            *dones.last_mut().unwrap() = true;
            let (_, ret) = gae(&r, &v, &dones, gamma, 1.0).unwrap();
            // with λ = 1 the return is the plain discounted reward-to-go
            let mut g = 0.0;
            for t in (0..r.len()).rev() {
                g = r[t] + gamma * g;
                proptest::prop_assert!((ret[t] - g).abs() < 1e-9);
            }
        }
    }
}
