use super::{Grads, MlpParams, ParamTensors};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient contained a NaN or infinity; parameters and moments were left untouched.
    SkippedNonFinite,
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<P: ParamTensors + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` from `grads` (same tensor layout).
    pub fn update<P, G>(&mut self, params: &mut P, grads: &G) -> Result<StepOutcome>
    where
        P: ParamTensors + ?Sized,
        G: ParamTensors + ?Sized,
    {
        let gs = grads.tensors();
        let mut ps = params.tensors_mut();
        if gs.len() != ps.len()
            || gs.len() != self.m.len()
            || gs
                .iter()
                .zip(ps.iter())
                .zip(&self.m)
                .any(|((g, p), m)| g.len() != p.len() || g.len() != m.len())
        {
            return Err(Error::Contract("gradient, parameter and moment shapes differ".into()));
        }
        if !gs.iter().all(|t| t.iter().all(|g| g.is_finite())) {
            log::warn!("adam: non-finite gradient at step {}, update skipped", self.step);
            return Ok(StepOutcome::SkippedNonFinite);
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

/// Convenience wrapper for the common MLP case.
pub fn adam_step(params: &mut MlpParams, grads: &Grads, state: &mut AdamState) -> Result<StepOutcome> {
    state.update(params, grads)
}
