//! Causal auto-encoder (CAE) toolkit.
//!
//! The CAE is an auto-encoder whose softmax latent layer is read as a
//! probability distribution over four causal populations:
//!
//! | population      | `y0` | `y1` |
//! |-----------------|------|------|
//! | Responder       | 0    | 1    |
//! | Doomed          | 0    | 0    |
//! | Survivor        | 1    | 1    |
//! | Anti-responder  | 1    | 0    |
//!
//! During training each sample's latent vector is gated by a binary mask
//! built from its observed treatment and outcome, which zeroes the two
//! populations the observation rules out. At prediction time the encoder
//! alone yields the population distribution, the counterfactual outcome
//! and the conditional average treatment effect.
//!
//! The crate also ships T-learner baselines, uplift/PEHE metrics, a
//! Wilcoxon signed-rank test, a synthetic data generator and the
//! experiment drivers behind the `cae` command-line tool.

pub mod baselines;
pub mod cae;
pub mod data;
mod error;
pub mod exec;
pub mod experiment;
pub mod mask;
pub mod metrics;
pub mod numcore;

pub use error::{Error, Result};
pub use mask::{CausalPopulation, LatentLayout, Mask};
