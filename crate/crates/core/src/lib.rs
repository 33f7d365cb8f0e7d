//! Recovering loss-to-followup information (binary outcome and continuous
//! time-to-outcome) in survival datasets.
//!
//! The main imputer is an overcomplete denoising autoencoder ([`dae`]); the
//! baseline is chained-equation imputation with predictive mean matching
//! ([`mice`]). Around them sit data simulation ([`simulate`]), loss
//! induction ([`missingness`]), scoring ([`metrics`]), Kaplan-Meier analysis
//! ([`survival`]) and a config-driven experiment runner ([`harness`]).

pub mod dae;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mice;
pub mod missingness;
pub mod nn;
pub mod rng;
pub mod simulate;
pub mod survival;
pub mod tabular;

pub use error::{Error, Result};
pub use rng::RngStream;
