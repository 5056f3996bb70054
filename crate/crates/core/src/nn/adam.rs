//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Moments<T>>,
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over the parameter list. The list must
    /// be the same (same order, same shapes) on every call; moment buffers
    /// are allocated lazily on the first step.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: vec![T::zero(); p.len()],
                    v: vec![T::zero(); p.len()],
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Train(
                "adam: parameter list changed between steps".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.eps);

        for (param, mom) in params.iter_mut().zip(self.moments.iter_mut()) {
            if mom.m.len() != param.len() {
                return Err(Error::Train("adam: parameter shape changed".into()));
            }
            let grad = param
                .grad()
                .ok_or_else(|| Error::Train("adam: parameter has no gradient".into()))?
                .to_vec();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("adam: gradient".into()));
            }
            let data = param.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                mom.m[i] = b1 * mom.m[i] + (one - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (one - b2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
