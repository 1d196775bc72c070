use ndarray::Array2;

use crate::{Error, Result};

/// Batch mean of the squared L2 reconstruction error, with its gradient
/// with respect to `prediction`.
pub fn mse_loss(prediction: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if prediction.dim() != target.dim() {
        return Err(Error::config(format!(
            "prediction shape {:?} does not match target shape {:?}",
            prediction.dim(),
            target.dim()
        )));
    }
    let n = prediction.nrows().max(1) as f64;
    let diff = prediction - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}
