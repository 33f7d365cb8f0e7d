//! Central finite-difference check of `Network::backward`.

use super::loss::mse_loss;
use super::network::{Mode, Network};
use super::Tensor2;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Gradients smaller than this in both routes count as agreeing zeros.
const ZERO_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_params: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

fn train_loss(net: &Network, batch: &Tensor2, target: &Tensor2, rng: &RngStream) -> Result<f64> {
    // Same rng state for every evaluation, so dropout masks are frozen.
    let mut net = net.clone();
    let (out, _) = net.forward(batch, Mode::Train, &mut rng.clone())?;
    Ok(mse_loss(&out, target)?.0)
}

/// Compares analytic MSE gradients to `(f(p+h) - f(p-h)) / 2h` for every
/// trainable scalar and returns the worst relative error.
pub fn grad_check(net: &Network, batch: &Tensor2, target: &Tensor2, h: f64, rng: &RngStream) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = net.clone();
    let (out, cache) = work.forward(batch, Mode::Train, &mut rng.clone())?;
    let (_, g) = mse_loss(&out, target)?;
    let analytic = work.backward(&cache, &g)?;

    let mut max_rel = 0.0f64;
    let mut n_params = 0;
    let shapes: Vec<(usize, usize)> = net.trainable().iter().map(|t| t.dim()).collect();
    for (k, &(rows, cols)) in shapes.iter().enumerate() {
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = net.clone();
                plus.trainable_mut()[k][[i, j]] += h;
                let mut minus = net.clone();
                minus.trainable_mut()[k][[i, j]] -= h;
                let numeric = (train_loss(&plus, batch, target, rng)? - train_loss(&minus, batch, target, rng)?) / (2.0 * h);
                max_rel = max_rel.max(relative_error(analytic.0[k][[i, j]], numeric));
                n_params += 1;
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        n_params,
    })
}
