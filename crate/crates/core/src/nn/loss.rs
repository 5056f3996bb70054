//! Training losses: per-sample squared error averaged over the mini-batch,
//! plain or weighted by each sample's linear SNR.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

fn batch_dims<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dim(format!(
            "loss: prediction shape {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let b = pred.shape()[0];
    Ok((b, pred.len() / b))
}

/// `(1/n) sum_i ||pred_i - target_i||^2` over the batch, with its gradient
/// `2 (pred - target) / n`.
pub fn loss_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (b, _) = batch_dims(pred, target)?;
    let inv_n = 1.0 / b as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut total = 0.0;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data().iter())
        .zip(target.data().iter())
    {
        let d = (p - t).as_f64();
        total += d * d;
        *g = T::from_f64(2.0 * d * inv_n);
    }
    Ok((total * inv_n, grad))
}

/// `(1/n) sum_i w_i ||pred_i - target_i||^2` with one non-negative weight per
/// sample (linear SNR for mixed-SNR training). With all weights 1 this equals
/// [`loss_mse`].
pub fn loss_weighted_mse<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &[f64],
) -> Result<(f64, Tensor<T>)> {
    let (b, feat) = batch_dims(pred, target)?;
    if weights.len() != b {
        return Err(Error::Dim(format!(
            "loss: {} weights for batch of {b}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Config(format!("loss: negative weight {w}")));
    }
    let inv_n = 1.0 / b as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut total = 0.0;
    for i in 0..b {
        let w = weights[i];
        for j in 0..feat {
            let idx = i * feat + j;
            let d = (pred.data()[idx] - target.data()[idx]).as_f64();
            total += w * d * d;
            grad.data_mut()[idx] = T::from_f64(2.0 * w * d * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}
