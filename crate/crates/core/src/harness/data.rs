//! Dataset splitting and training-matrix assembly.

use std::path::{Path, PathBuf};

use crate::channel::{Dataset, ObsMode, SystemConfig};
use crate::error::{Error, Result};
use crate::estimators::{featurize, featurize_target, Normalizer};
use crate::numerics::dft_shift_matrix;

/// The three file-pair stems written by [`build_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

fn split_counts(count: usize) -> Result<(usize, usize, usize)> {
    if count == 0 || count % 5 != 0 {
        return Err(Error::Config(format!(
            "dataset count must be a positive multiple of 5 for the 3:1:1 split, got {count}"
        )));
    }
    let fifth = count / 5;
    Ok((3 * fifth, fifth, fifth))
}

/// Generates `count` records and splits them 3:1:1 into train/validation/test
/// windows of one ordinal space, so the full generation is deterministic and
/// the split indices are disjoint by construction.
pub fn generate_splits(
    cfg: &SystemConfig,
    mode: ObsMode,
    count: usize,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, n_test) = split_counts(count)?;
    let train = Dataset::generate(cfg, mode, n_train, 0)?;
    let val = Dataset::generate(cfg, mode, n_val, n_train as u64)?;
    let test = Dataset::generate(cfg, mode, n_test, (n_train + n_val) as u64)?;
    Ok((train, val, test))
}

/// Generates and writes the three split file pairs under `out_dir` as
/// `<stem>_train`, `<stem>_val`, `<stem>_test`.
pub fn build_dataset(
    cfg: &SystemConfig,
    mode: ObsMode,
    count: usize,
    out_dir: &Path,
    stem: &str,
) -> Result<DatasetSplits> {
    let (train, val, test) = generate_splits(cfg, mode, count)?;
    let splits = DatasetSplits {
        train: out_dir.join(format!("{stem}_train")),
        val: out_dir.join(format!("{stem}_val")),
        test: out_dir.join(format!("{stem}_test")),
    };
    train.save(&splits.train)?;
    val.save(&splits.val)?;
    test.save(&splits.test)?;
    Ok(splits)
}

/// Feature/target matrices for one split, flattened row-major. One row per
/// (record, SNR slot) pair; the per-row linear SNR doubles as the weighted
/// loss weight.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub features: Vec<f32>,
    pub targets: Vec<f32>,
    pub snr_db: Vec<f64>,
    pub snr_linear: Vec<f64>,
    pub rows: usize,
    pub feature_width: usize,
    pub target_width: usize,
    /// Per-sample model input shape (`[N, 2]` or `[2M]`).
    pub input_shape: Vec<usize>,
}

impl TrainingData {
    /// Fits input statistics over the given slots of a (training) split.
    pub fn fit_normalizer(ds: &Dataset, slots: &[usize]) -> Result<Normalizer> {
        let f = dft_shift_matrix(ds.manifest.config.n_antennas);
        let mut matrix = Vec::new();
        let mut width = 0;
        for &slot in slots {
            for per_snr in &ds.observations {
                let row = featurize(&per_snr[slot], &f);
                width = row.len();
                matrix.extend(row);
            }
        }
        if matrix.is_empty() {
            return Err(Error::Config("fit_normalizer: no rows".into()));
        }
        Normalizer::fit(&matrix, width)
    }

    /// Assembles normalized features and raw angular targets for the given
    /// SNR slots (single-SNR training passes one slot; mixed training passes
    /// all of them, keeping per-SNR sample counts equal).
    pub fn assemble(ds: &Dataset, slots: &[usize], normalizer: &Normalizer) -> Result<Self> {
        if slots.is_empty() || ds.is_empty() {
            return Err(Error::Config("assemble: empty dataset or slot list".into()));
        }
        let cfg = &ds.manifest.config;
        let f = dft_shift_matrix(cfg.n_antennas);
        let input_shape = match ds.manifest.mode {
            ObsMode::FullArray => vec![cfg.n_antennas, 2],
            ObsMode::Had => vec![2 * cfg.n_rf_chains],
        };
        let feature_width: usize = input_shape.iter().product();
        let target_width = 2 * cfg.n_antennas;

        let rows = ds.len() * slots.len();
        let mut features = Vec::with_capacity(rows * feature_width);
        let mut targets = Vec::with_capacity(rows * target_width);
        let mut snr_db = Vec::with_capacity(rows);
        for &slot in slots {
            if slot >= cfg.snr_db.len() {
                return Err(Error::Config(format!("assemble: no SNR slot {slot}")));
            }
            for (sample, per_snr) in ds.samples.iter().zip(ds.observations.iter()) {
                let mut row = featurize(&per_snr[slot], &f);
                normalizer.transform_in_place(&mut row)?;
                features.extend(row.iter().map(|&v| v as f32));
                targets.extend(featurize_target(sample).iter().map(|&v| v as f32));
                snr_db.push(per_snr[slot].snr_db);
            }
        }
        let snr_linear = snr_db
            .iter()
            .map(|&s| SystemConfig::snr_linear(s))
            .collect();
        Ok(Self {
            features,
            targets,
            snr_db,
            snr_linear,
            rows,
            feature_width,
            target_width,
            input_shape,
        })
    }

    pub fn feature_row(&self, row: usize) -> &[f32] {
        &self.features[row * self.feature_width..(row + 1) * self.feature_width]
    }

    pub fn target_row(&self, row: usize) -> &[f32] {
        &self.targets[row * self.target_width..(row + 1) * self.target_width]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = 16;
        cfg.n_rf_chains = 4;
        cfg.n_paths = 4;
        cfg.snr_db = vec![10.0, 20.0];
        cfg.master_seed = 5;
        cfg
    }

    #[test]
    fn split_ratio_is_three_one_one() {
        let (a, b, c) = split_counts(200_000).unwrap();
        assert_eq!((a, b, c), (120_000, 40_000, 40_000));
        let (a, b, c) = split_counts(20_000).unwrap();
        assert_eq!((a, b, c), (12_000, 4_000, 4_000));
        assert!(split_counts(7).is_err());
    }

    #[test]
    fn splits_are_disjoint_windows() {
        let cfg = tiny_cfg();
        let (train, val, test) = generate_splits(&cfg, ObsMode::FullArray, 10).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(val.len(), 2);
        assert_eq!(test.len(), 2);
        // Disjointness: ordinal windows do not overlap, so the records differ.
        let all: Vec<f64> = train
            .samples
            .iter()
            .chain(val.samples.iter())
            .chain(test.samples.iter())
            .map(|s| s.mean_aoa)
            .collect();
        let mut sorted = all.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        assert_eq!(sorted.len(), all.len(), "duplicate records across splits");
    }

    #[test]
    fn build_dataset_writes_three_pairs_deterministically() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let a = build_dataset(&cfg, ObsMode::Had, 10, dir.path(), "a").unwrap();
        let b = build_dataset(&cfg, ObsMode::Had, 10, dir.path(), "b").unwrap();
        for (pa, pb) in [(&a.train, &b.train), (&a.val, &b.val), (&a.test, &b.test)] {
            let ba = std::fs::read(pa.with_extension("bin")).unwrap();
            let bb = std::fs::read(pb.with_extension("bin")).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn assembled_rows_carry_snr_tags() {
        let cfg = tiny_cfg();
        let ds = Dataset::generate(&cfg, ObsMode::Had, 6, 0).unwrap();
        let norm = TrainingData::fit_normalizer(&ds, &[0, 1]).unwrap();
        let data = TrainingData::assemble(&ds, &[0, 1], &norm).unwrap();
        assert_eq!(data.rows, 12);
        assert_eq!(data.feature_width, 8);
        assert_eq!(data.target_width, 32);
        assert_eq!(data.snr_db[0], 10.0);
        assert_eq!(data.snr_db[6], 20.0);
        assert!((data.snr_linear[6] - 100.0).abs() < 1e-9);
    }
}
