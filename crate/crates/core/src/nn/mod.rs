//! Minimal double-precision neural-network engine.
//!
//! Networks are fixed-topology dense MLPs. A forward pass can record a
//! [`ForwardCache`] that [`MlpParams::backward`] consumes to produce exact
//! reverse-mode gradients. Everything else in the crate (actor, critic,
//! gate, experts, soliton sub-networks) is built from these pieces.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use checkpoint::{load_params, read_params, save_params, write_params, MAGIC, VERSION};
pub use gradcheck::{finite_diff_check, GradCheckReport, GRADCHECK_FLOOR};
pub use mlp::{Activation, Backward, Dense, DenseGrad, ForwardCache, Grads, MlpParams};
pub use ops::{categorical_sample, entropy, log_softmax, mse_loss, softmax};

/// Ordered view of a parameter set as flat tensors.
///
/// Implemented by parameter containers and their gradient mirrors so that
/// optimizers and the gradient checker can treat them uniformly. The order of
/// tensors must be identical between a parameter set and its gradients.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every tensor from a flat vector produced by [`flatten`](Self::flatten).
    fn unflatten(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
