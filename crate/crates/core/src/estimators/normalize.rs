//! Input/output processing for the neural estimators.
//!
//! Networks see real features: the full-array LS estimate is moved to the
//! angular domain and split into interleaved re/im pairs `(2N)`, the HAD
//! received vector is split the same way `(2M)`. Inputs are standardized by
//! statistics fit on the training split only; targets stay raw angular-domain
//! re/im. Network outputs are recombined into a complex angular estimate and
//! mapped back to the antennas with the adjoint transform.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, Observation, ObservationPayload};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, C64};

/// Per-feature standardization statistics (training split only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Floor applied to per-feature standard deviations.
const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    /// Fits over `rows` feature vectors stored contiguously (`dim` wide).
    pub fn fit(matrix: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || matrix.is_empty() || matrix.len() % dim != 0 {
            return Err(Error::Dim("normalizer: bad feature matrix".into()));
        }
        let rows = matrix.len() / dim;
        let inv = 1.0 / rows as f64;
        let mut mean = vec![0.0; dim];
        for row in matrix.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![0.0; dim];
        for row in matrix.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s * inv).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_in_place(&self, features: &mut [f64]) -> Result<()> {
        if features.len() != self.dim() {
            return Err(Error::Dim(format!(
                "normalizer: {} features, expected {}",
                features.len(),
                self.dim()
            )));
        }
        for (i, v) in features.iter_mut().enumerate() {
            *v = (*v - self.mean[i]) / self.std[i];
        }
        Ok(())
    }

    pub fn inverse_in_place(&self, features: &mut [f64]) -> Result<()> {
        if features.len() != self.dim() {
            return Err(Error::Dim("normalizer: feature width mismatch".into()));
        }
        for (i, v) in features.iter_mut().enumerate() {
            *v = *v * self.std[i] + self.mean[i];
        }
        Ok(())
    }
}

fn interleave(v: &CVector, out: &mut Vec<f64>) {
    for z in v.iter() {
        out.push(z.re);
        out.push(z.im);
    }
}

/// Raw (pre-normalization) network features for one observation:
/// full-array mode yields the angular-domain LS estimate as `2N` interleaved
/// re/im values, HAD mode the received vector as `2M`.
pub fn featurize(obs: &Observation, f: &CMatrix) -> Vec<f64> {
    let mut out = Vec::new();
    match &obs.payload {
        ObservationPayload::FullArrayLs(h_ls) => interleave(&f.matvec(h_ls), &mut out),
        ObservationPayload::Had(y) => interleave(y, &mut out),
    }
    out
}

/// Training target: the true angular-domain channel, interleaved re/im (`2N`).
pub fn featurize_target(sample: &ChannelSample) -> Vec<f64> {
    let mut out = Vec::new();
    interleave(&sample.x, &mut out);
    out
}

/// Recombines a network output (interleaved re/im of the angular estimate)
/// into both domains: `x_hat` and `h_hat = F^H x_hat`.
pub fn postprocess(net_out: &[f64], f: &CMatrix) -> Result<super::Estimate> {
    let n = f.rows();
    if net_out.len() != 2 * n {
        return Err(Error::Dim(format!(
            "postprocess: {} values for N={n}",
            net_out.len()
        )));
    }
    let x_hat = CVector::new(
        net_out
            .chunks_exact(2)
            .map(|p| C64::new(p[0], p[1]))
            .collect(),
    );
    let h_hat = f.hermitian_apply(&x_hat);
    Ok(super::Estimate { x_hat, h_hat })
}
