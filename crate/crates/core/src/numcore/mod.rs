//! Minimal dense-network math: layers, activations, batch normalization,
//! MSE loss, reverse-mode gradients, Adam and a finite-difference oracle.
//!
//! All arithmetic is `f64`.

mod activation;
mod adam;
mod gradcheck;
mod loss;
mod network;

pub use activation::{relu, sigmoid, softmax, softmax_in_place, Activation};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_difference_gradient, relative_error, RELATIVE_ERROR_FLOOR};
pub use loss::mse_loss;
pub use network::{
    BatchNormState, DenseLayer, ForwardTrace, Gradients, LayerGradient, LayerSpec, LayerTrace,
    Mode, Network, NetworkSpec, NormGradient, BATCH_NORM_EPSILON, BATCH_NORM_MOMENTUM,
};
