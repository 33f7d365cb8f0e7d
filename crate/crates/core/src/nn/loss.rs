use super::Tensor2;
use crate::error::{Error, Result};

/// Mean over all cells of `(pred - target)^2`, and its gradient
/// `2 (pred - target) / cells`.
pub fn mse_loss(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let cells = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / cells;
    Ok((loss, diff * (2.0 / cells)))
}
