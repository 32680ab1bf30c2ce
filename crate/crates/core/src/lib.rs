//! Desk-scale laboratory for prosumer solar-energy trading.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small double-precision MLP engine (forward, reverse-mode
//!   gradients, Adam, finite-difference checking, binary checkpoints).
//! - [`dataio`]: CSV ingestion of sub-daily solar samples and daily prices,
//!   daily aggregation, splits, and a seeded synthetic generator.
//! - [`env`]: the hold/sell trading environment with recurrent sparse rewards
//!   and forced liquidation on the final day.
//! - [`agents`]: PPO (actor/critic, GAE, clipped surrogate), the sell-only and
//!   random baselines, and the shared evaluation loop.
//! - [`forecast`]: table and soliton embeddings, a sparse top-k mixture of
//!   experts price forecaster, and the best-day selling policy built on it.
//! - [`harness`]: experiment configuration, orchestration and report emission
//!   used by the `solarlab` binary.

pub mod agents;
pub mod dataio;
pub mod env;
mod error;
pub mod forecast;
pub mod harness;
pub mod nn;

pub use error::{Error, Result};

/// Seeded random stream used everywhere in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds a seeded [`Rng`] on substream `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
