//! MSE evaluation of any estimator over a test split.

use serde::{Deserialize, Serialize};

use crate::channel::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{EstimateInput, Estimator};

/// One SNR point of an estimator's evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseRow {
    pub snr_db: f64,
    pub n: usize,
    /// Mean angular-domain squared error (the reported metric).
    pub mse_linear: f64,
    pub mse_db: f64,
    /// Standard error of the per-sample squared errors.
    pub stderr: f64,
    /// Antenna-domain cross-check; equals `mse_linear` up to the unitary
    /// transform's rounding.
    pub mse_antenna: f64,
    /// Largest per-sample relative gap between the two domains.
    pub max_domain_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseReport {
    pub estimator: String,
    pub rows: Vec<MseRow>,
}

/// Evaluates mean `||x_hat - x||^2` per SNR slot, with the antenna-domain
/// cross-check (`||h_hat - h||^2` must match: the transform is unitary).
pub fn evaluate_mse(est: &dyn Estimator, ds: &Dataset, slots: &[usize]) -> Result<MseReport> {
    if ds.is_empty() {
        return Err(Error::Config("evaluate_mse: empty test set".into()));
    }
    let mut rows = Vec::with_capacity(slots.len());
    for &slot in slots {
        if slot >= ds.snr_points().len() {
            return Err(Error::Config(format!("evaluate_mse: no SNR slot {slot}")));
        }
        let inputs: Vec<EstimateInput> = ds
            .samples
            .iter()
            .zip(ds.observations.iter())
            .enumerate()
            .map(|(i, (sample, per_snr))| EstimateInput {
                obs: &per_snr[slot],
                sample,
                ordinal: ds.manifest.ordinal_offset + i as u64,
            })
            .collect();
        let estimates = est.estimate_batch(&inputs)?;

        let n = estimates.len();
        let mut per_sample = Vec::with_capacity(n);
        let mut sum_ant = 0.0;
        let mut max_gap = 0.0_f64;
        for (e, input) in estimates.iter().zip(inputs.iter()) {
            let ang = e.x_hat.sub(&input.sample.x).norm_sq();
            let ant = e.h_hat.sub(&input.sample.h).norm_sq();
            let gap = (ang - ant).abs() / ang.max(ant).max(1e-30);
            max_gap = max_gap.max(gap);
            per_sample.push(ang);
            sum_ant += ant;
        }
        let mean = per_sample.iter().sum::<f64>() / n as f64;
        let var = per_sample
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        rows.push(MseRow {
            snr_db: ds.snr_points()[slot],
            n,
            mse_linear: mean,
            mse_db: 10.0 * mean.log10(),
            stderr: (var / n as f64).sqrt(),
            mse_antenna: sum_ant / n as f64,
            max_domain_gap: max_gap,
        });
    }
    Ok(MseReport {
        estimator: est.name(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ObsMode, SystemConfig};
    use crate::estimators::{Estimate, LsEstimator};
    use crate::numerics::CVector;

    struct PerfectEstimator;
    impl Estimator for PerfectEstimator {
        fn name(&self) -> String {
            "perfect".into()
        }
        fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
            Ok(Estimate {
                x_hat: input.sample.x.clone(),
                h_hat: input.sample.h.clone(),
            })
        }
    }

    struct ZeroEstimator(usize);
    impl Estimator for ZeroEstimator {
        fn name(&self) -> String {
            "zero".into()
        }
        fn estimate(&self, _input: EstimateInput<'_>) -> Result<Estimate> {
            Ok(Estimate {
                x_hat: CVector::zeros(self.0),
                h_hat: CVector::zeros(self.0),
            })
        }
    }

    fn tiny_ds(snr_db: Vec<f64>, count: usize) -> Dataset {
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = 32;
        cfg.n_rf_chains = 8;
        cfg.snr_db = snr_db;
        cfg.master_seed = 17;
        Dataset::generate(&cfg, ObsMode::FullArray, count, 0).unwrap()
    }

    #[test]
    fn perfect_estimator_scores_zero() {
        let ds = tiny_ds(vec![20.0], 50);
        let report = evaluate_mse(&PerfectEstimator, &ds, &[0]).unwrap();
        assert_eq!(report.rows[0].mse_linear, 0.0);
    }

    #[test]
    fn zero_estimator_scores_mean_channel_energy() {
        // E||x||^2 = N.
        let ds = tiny_ds(vec![20.0], 2000);
        let report = evaluate_mse(&ZeroEstimator(32), &ds, &[0]).unwrap();
        let want = 32.0;
        let got = report.rows[0].mse_linear;
        assert!((got - want).abs() / want < 0.1, "{got} vs {want}");
    }

    #[test]
    fn ls_estimator_scores_n_sigma_squared() {
        let ds = tiny_ds(vec![0.0, 10.0, 20.0], 10_000);
        let est = LsEstimator::new(32);
        let report = evaluate_mse(&est, &ds, &[0, 1, 2]).unwrap();
        for row in &report.rows {
            let want = 32.0 * SystemConfig::noise_var(row.snr_db);
            assert!(
                (row.mse_linear - want).abs() / want < 0.03,
                "snr {} mse {} want {want}",
                row.snr_db,
                row.mse_linear
            );
            assert!(row.max_domain_gap < 1e-10);
            assert!((row.mse_db - 10.0 * row.mse_linear.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let ds = tiny_ds(vec![20.0], 5);
        let mut empty = ds.clone();
        empty.samples.clear();
        empty.observations.clear();
        assert!(evaluate_mse(&PerfectEstimator, &empty, &[0]).is_err());
    }
}
