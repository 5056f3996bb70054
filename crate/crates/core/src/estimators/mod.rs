//! All channel estimators behind one interface.
//!
//! Classical baselines (LS passthrough, MMSE with a single or per-region
//! correlation matrix, separate LS under HAD) and the neural estimators (1-D
//! convolutional and fully connected networks, each with or without channel
//! attention).

mod classical;
mod neural;
mod normalize;

pub use classical::{
    estimate_ccm, separate_ls, separate_ls_rounds, CcmBank, LsEstimator, MmseRegional,
    MmseSingle, SeparateLsEstimator, CCM_BANK_FORMAT_VERSION,
};
pub use neural::{
    build_cnn_spec, build_fnn_att_spec, build_fnn_spec, spec_for, CnnArch, FnnArch, FnnAttArch,
    NeuralEstimator,
};
pub use normalize::{featurize, featurize_target, postprocess, Normalizer};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, Observation};
use crate::error::Result;
use crate::numerics::CVector;

/// Which estimator, with its architecture hyperparameters where applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ls,
    MmseSingle,
    MmseRegional {
        region_width_deg: f64,
        sine_sharing: bool,
    },
    SeparateLs,
    Cnn {
        #[serde(default)]
        arch: CnnArch,
    },
    CnnAtt {
        #[serde(default)]
        arch: CnnArch,
    },
    Fnn {
        #[serde(default)]
        arch: FnnArch,
    },
    FnnAtt {
        #[serde(default)]
        arch: FnnAttArch,
    },
}

impl EstimatorKind {
    pub fn tag(&self) -> String {
        match self {
            EstimatorKind::Ls => "ls".into(),
            EstimatorKind::MmseSingle => "mmse-single".into(),
            EstimatorKind::MmseRegional {
                region_width_deg, ..
            } => format!("mmse-regional-{region_width_deg}deg"),
            EstimatorKind::SeparateLs => "separate-ls".into(),
            EstimatorKind::Cnn { .. } => "cnn".into(),
            EstimatorKind::CnnAtt { .. } => "cnn-att".into(),
            EstimatorKind::Fnn { .. } => "fnn".into(),
            EstimatorKind::FnnAtt { .. } => "fnn-att".into(),
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Cnn { .. }
                | EstimatorKind::CnnAtt { .. }
                | EstimatorKind::Fnn { .. }
                | EstimatorKind::FnnAtt { .. }
        )
    }

    /// Parses the CLI-facing tag. Architecture hyperparameters take their
    /// scale defaults.
    pub fn parse(tag: &str) -> Option<Self> {
        Some(match tag {
            "ls" => EstimatorKind::Ls,
            "mmse-single" => EstimatorKind::MmseSingle,
            "mmse-regional" | "mmse-3deg" => EstimatorKind::MmseRegional {
                region_width_deg: 3.0,
                sine_sharing: true,
            },
            "separate-ls" => EstimatorKind::SeparateLs,
            "cnn" => EstimatorKind::Cnn {
                arch: CnnArch::default(),
            },
            "cnn-att" => EstimatorKind::CnnAtt {
                arch: CnnArch::default(),
            },
            "fnn" => EstimatorKind::Fnn {
                arch: FnnArch::default(),
            },
            "fnn-att" => EstimatorKind::FnnAtt {
                arch: FnnAttArch::default(),
            },
            _ => return None,
        })
    }
}

/// An estimator's answer in both domains: `h_hat` on the antennas and
/// `x_hat = F h_hat` in the angular domain. The two always agree in norm
/// because the transform is unitary.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub x_hat: CVector,
    pub h_hat: CVector,
}

/// Everything an estimator may look at for one record.
///
/// `sample` is ground truth. Only two estimators touch it, each sanctioned by
/// its protocol: regional MMSE reads the mean AoA (region estimation is
/// assumed accurate), and separate LS re-measures the channel through antenna
/// switching rather than consuming `obs`.
#[derive(Debug, Clone, Copy)]
pub struct EstimateInput<'a> {
    pub obs: &'a Observation,
    pub sample: &'a ChannelSample,
    /// Record ordinal within the evaluated set; seeds any per-record noise an
    /// estimator's own acquisition protocol needs.
    pub ordinal: u64,
}

/// Common estimator interface. Implementations are immutable once fitted and
/// safe to call concurrently.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate>;

    /// Batched estimation; neural estimators override this to run batched
    /// inference.
    fn estimate_batch(&self, inputs: &[EstimateInput<'_>]) -> Result<Vec<Estimate>> {
        inputs.iter().map(|i| self.estimate(*i)).collect()
    }
}
