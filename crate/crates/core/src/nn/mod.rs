//! A small dense network core: dense, batch-norm, dropout and activation
//! layers with exact reverse-mode gradients, MSE loss, Adam, and a
//! finite-difference gradient checker. Everything is `f64`.

pub mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layer::{ActivationKind, LayerParams, LayerSpec, Tensor2};
pub use loss::mse_loss;
pub use network::{ForwardCache, Gradients, Mode, Network};
pub use optim::{AdamConfig, OptimizerState};
