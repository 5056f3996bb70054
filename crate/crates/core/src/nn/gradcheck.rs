//! Central-finite-difference gradient verification.
//!
//! The oracle re-evaluates the training loss under coordinate perturbations
//! and compares the slope against the analytic backward pass. It is meant to
//! run at `f64`, where the engine's gradients must agree to better than 1e-4
//! relative error on every parameter and input coordinate.
//!
//! ReLU kinks are excluded: a finite difference straddling the kink measures
//! the wrong slope, so configurations where any ReLU pre-activation sits
//! within `KINK_MARGIN` of zero are reported as [`GradCheck::KinkTooClose`]
//! and the caller draws a fresh configuration.

use crate::error::Result;

use super::loss::loss_mse;
use super::model::Model;
use super::tensor::Tensor;

/// Minimum |pre-activation| at every ReLU for a trustworthy check, in units
/// of the probe step.
pub const KINK_MARGIN_STEPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    /// Largest relative error over all parameter and input coordinates.
    MaxRelErr(f64),
    /// A ReLU pre-activation sits too close to zero for finite differences.
    KinkTooClose,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

fn loss_of(model: &mut Model<f64>, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let out = model.forward_train(input)?;
    Ok(loss_mse(&out, target)?.0)
}

/// Checks every parameter coordinate and every input coordinate of the model
/// against central finite differences of the MSE training loss at step `h`.
pub fn check_gradients(
    model: &mut Model<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    h: f64,
) -> Result<GradCheck> {
    // Analytic pass.
    model.zero_grads();
    let out = model.forward_train(input)?;
    if let Some(margin) = model.relu_kink_margin() {
        if margin < KINK_MARGIN_STEPS * h {
            return Ok(GradCheck::KinkTooClose);
        }
    }
    let (_, dloss) = loss_mse(&out, target)?;
    let input_grad = model.backward(&dloss)?;
    let analytic_params: Vec<Vec<f64>> = model
        .params_mut()
        .iter()
        .map(|p| p.grad().unwrap().to_vec())
        .collect();

    let mut max_err = 0.0_f64;

    // Parameter perturbations.
    let n_params = analytic_params.len();
    for pi in 0..n_params {
        for ci in 0..analytic_params[pi].len() {
            let orig = model.params_mut()[pi].data()[ci];
            model.params_mut()[pi].data_mut()[ci] = orig + h;
            let lp = loss_of(model, input, target)?;
            model.params_mut()[pi].data_mut()[ci] = orig - h;
            let lm = loss_of(model, input, target)?;
            model.params_mut()[pi].data_mut()[ci] = orig;
            let fd = (lp - lm) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic_params[pi][ci], fd));
        }
    }

    // Input perturbations.
    for ci in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[ci] += h;
        let lp = loss_of(model, &plus, target)?;
        let mut minus = input.clone();
        minus.data_mut()[ci] -= h;
        let lm = loss_of(model, &minus, target)?;
        let fd = (lp - lm) / (2.0 * h);
        max_err = max_err.max(rel_err(input_grad.data()[ci], fd));
    }

    Ok(GradCheck::MaxRelErr(max_err))
}

/// Convenience wrapper that redraws `(model seed, input)` until the
/// configuration is clear of ReLU kinks, then returns the max relative error.
pub fn check_gradients_rerolling(
    mut build: impl FnMut(u64) -> Result<(Model<f64>, Tensor<f64>, Tensor<f64>)>,
    base_seed: u64,
    h: f64,
) -> Result<f64> {
    for attempt in 0..16 {
        let (mut model, input, target) = build(base_seed + attempt * 65_537)?;
        match check_gradients(&mut model, &input, &target, h)? {
            GradCheck::MaxRelErr(e) => return Ok(e),
            GradCheck::KinkTooClose => continue,
        }
    }
    Err(crate::error::Error::Numerics(
        "gradient check: could not find a kink-free configuration".into(),
    ))
}
