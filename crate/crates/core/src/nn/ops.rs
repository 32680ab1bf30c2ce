use rand::Rng as _;

use crate::{Error, Result, Rng};

/// Numerically stable softmax (max-subtracted).
///
/// Panics on an empty slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "log_softmax of an empty vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Draws an index from `probs` and returns it with its log-probability.
pub fn categorical_sample(probs: &[f64], rng: &mut Rng) -> Result<(usize, f64)> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Contract("invalid probability vector".into()));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("probabilities sum to {sum}, expected 1")));
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(i);
        if u < acc {
            break;
        }
    }
    let i = chosen.ok_or_else(|| Error::Contract("all-zero probability vector".into()))?;
    Ok((i, probs[i].ln()))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Config(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}
