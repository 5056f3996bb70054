//! Closed-form complexity accounting: FLOPs and parameter counts per
//! algorithm, evaluated from the system constants.
//!
//! Conventions: only multiplications are counted, one complex multiplication
//! is four real ones, one complex parameter is two real ones, and batch-norm
//! weights/biases are ignored. Acquisition terms (obtaining the LS estimate
//! or the compressed received vector) are included by default and can be
//! toggled off. The final attention module can be dropped from the test-time
//! totals, since its gates saturate and it can be removed after training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CcmBank, CnnArch, FnnAttArch};

/// Inputs of the closed forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityConstants {
    pub n_antennas: usize,
    pub n_rf_chains: usize,
    pub pilot_len: usize,
    /// Iteration count of the S-VBI baseline.
    pub svbi_iterations: usize,
    pub cnn: CnnArch,
    pub fnn_att: FnnAttArch,
    pub mmse_region_width_deg: f64,
    pub mmse_sine_sharing: bool,
    /// Count the pilot-processing FLOPs that every estimator needs before it
    /// can run.
    pub include_acquisition: bool,
    /// Drop the last (saturated) attention module from test-time totals.
    pub drop_final_attention: bool,
}

impl ComplexityConstants {
    /// The typical system settings of the complexity comparison:
    /// N=128, M=32, L_p=10, I_E=50, full-scale network shapes.
    pub fn paper() -> Self {
        Self {
            n_antennas: 128,
            n_rf_chains: 32,
            pilot_len: 10,
            svbi_iterations: 50,
            cnn: CnnArch::default(),
            fnn_att: FnnAttArch::default(),
            mmse_region_width_deg: 3.0,
            mmse_sine_sharing: true,
            include_acquisition: true,
            drop_final_attention: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ls,
    Cnn,
    CnnAtt,
    MmseSingle,
    MmseRegional,
    FnnAtt,
    Svbi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Ls,
        Algorithm::Cnn,
        Algorithm::CnnAtt,
        Algorithm::MmseSingle,
        Algorithm::MmseRegional,
        Algorithm::FnnAtt,
        Algorithm::Svbi,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::Cnn => "cnn",
            Algorithm::CnnAtt => "cnn-att",
            Algorithm::MmseSingle => "mmse-single",
            Algorithm::MmseRegional => "mmse-regional",
            Algorithm::FnnAtt => "fnn-att",
            Algorithm::Svbi => "s-vbi",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        Algorithm::ALL.iter().copied().find(|a| a.tag() == tag)
    }

    /// Whether the algorithm runs behind the hybrid analog-digital front end
    /// (which determines its acquisition term).
    pub fn uses_had(&self) -> bool {
        matches!(self, Algorithm::FnnAtt | Algorithm::Svbi)
    }
}

/// Per-algorithm FLOPs and parameters with their breakdown. Totals always
/// equal the sum of their parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub algorithm: String,
    pub flops_core: f64,
    pub flops_attention: f64,
    pub flops_acquisition: f64,
    pub flops_total: f64,
    pub params_core: f64,
    pub params_attention: f64,
    pub params_total: f64,
    pub constants: ComplexityConstants,
}

/// Evaluates the closed forms for one algorithm.
pub fn complexity_report(
    algorithm: Algorithm,
    constants: &ComplexityConstants,
) -> Result<ComplexityReport> {
    let n = constants.n_antennas as f64;
    let m = constants.n_rf_chains as f64;
    let lp = constants.pilot_len as f64;
    if constants.n_antennas == 0 || constants.n_rf_chains == 0 || constants.pilot_len == 0 {
        return Err(Error::Config(
            "complexity: N, M, L_p must all be positive".into(),
        ));
    }

    let cnn = &constants.cnn;
    let (nb, f) = (cnn.n_blocks as f64, cnn.filters as f64);
    let (l_in, l_hid, l_out) = (cnn.k_in as f64, cnn.k_hidden as f64, cnn.k_out as f64);
    let attention_modules = if constants.drop_final_attention {
        nb - 1.0
    } else {
        nb
    };

    let fa = &constants.fnn_att;
    let fc = fa.hidden_width() as f64;
    let c = fa.channels as f64;

    let acquisition = if constants.include_acquisition {
        if algorithm.uses_had() {
            4.0 * m * lp * lp
        } else {
            4.0 * n * lp * lp
        }
    } else {
        0.0
    };

    let ccm_regions =
        CcmBank::distinct_region_count(constants.mmse_region_width_deg, constants.mmse_sine_sharing)
            as f64;

    let (flops_core, flops_attention, params_core, params_attention) = match algorithm {
        Algorithm::Ls => (0.0, 0.0, 0.0, 0.0),
        Algorithm::Cnn | Algorithm::CnnAtt => {
            let core = (2.0 * l_in * f + 2.0 * l_out * f + l_hid * f * f * (nb - 1.0)) * n;
            let att_flops = attention_modules * f * (n + f + 1.0);
            let core_params = 2.0 * (l_in + l_out) * f + l_hid * (nb - 1.0) * f * f;
            let att_params = attention_modules * f * f;
            if algorithm == Algorithm::Cnn {
                (core, 0.0, core_params, 0.0)
            } else {
                (core, att_flops, core_params, att_params)
            }
        }
        Algorithm::MmseSingle => (
            4.0 * (2.0 * n * n * n + n * n),
            0.0,
            2.0 * n * n,
            0.0,
        ),
        Algorithm::MmseRegional => (
            4.0 * (2.0 * n * n * n + n * n),
            0.0,
            ccm_regions * 2.0 * n * n,
            0.0,
        ),
        Algorithm::FnnAtt => {
            // The attention share of the forward pass is the C^2 bottleneck
            // plus the squeeze/scale work C (F + F + 1) = C (2F + 1).
            let total_flops = fc * (2.0 * m + 2.0 * n + 1.0) + c * (c + 1.0);
            let att_flops = c * c + c * (2.0 * fa.features as f64 + 1.0);
            let total_params = fc * (2.0 * m + 2.0 * n) + c * c;
            (
                total_flops - att_flops,
                att_flops,
                total_params - c * c,
                c * c,
            )
        }
        Algorithm::Svbi => {
            let ie = constants.svbi_iterations as f64;
            (
                ie * (2.0 / 3.0 * m * m * m + (2.0 * m + 2.0) * n * n),
                0.0,
                0.0,
                0.0,
            )
        }
    };

    Ok(ComplexityReport {
        algorithm: algorithm.tag().to_string(),
        flops_core,
        flops_attention,
        flops_acquisition: acquisition,
        flops_total: flops_core + flops_attention + acquisition,
        params_core,
        params_attention,
        params_total: params_core + params_attention,
        constants: constants.clone(),
    })
}

/// Reports for every algorithm, as rows of a comparison table.
pub fn complexity_table(constants: &ComplexityConstants) -> Result<Vec<ComplexityReport>> {
    Algorithm::ALL
        .iter()
        .map(|a| complexity_report(*a, constants))
        .collect()
}
