//! Experiment orchestration: a TOML config describes a grid of (estimator,
//! system-parameter) points; each point runs generate -> fit/train ->
//! evaluate and lands in a result bundle with full provenance. Completed
//! points are cached on disk keyed by a config hash, so reruns skip work.
//!
//! Grid points run sequentially here; the heavy lifting inside each point
//! (generation, training, evaluation) is already parallel.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ObsMode, SystemConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    CcmBank, CnnArch, Estimator, EstimatorKind, FnnArch, FnnAttArch, LsEstimator, MmseRegional,
    MmseSingle, NeuralEstimator, SeparateLsEstimator,
};
use crate::harness::{
    evaluate_mse, generate_splits, train, train_mixed_snr, LossKind, TrainConfig, TrainingData,
};
use crate::nn::Model;

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// Top-level experiment configuration (TOML). Unknown keys are rejected with
/// the offending path in the error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub system: SystemOverrides,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub arch: ArchSection,
    pub grid: GridSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Parameter preset the system starts from.
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default = "default_mode")]
    pub mode: ObsMode,
}

fn default_scale() -> Scale {
    Scale::Desk
}

fn default_mode() -> ObsMode {
    ObsMode::FullArray
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub n_antennas: Option<usize>,
    pub n_rf_chains: Option<usize>,
    pub n_users: Option<usize>,
    pub pilot_len: Option<usize>,
    pub n_paths: Option<usize>,
    pub angular_spread_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Total records (split 3:1:1).
    pub count: usize,
    /// SNR schedule; every record carries one observation per point.
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_patience: usize,
    pub stop_patience: usize,
    pub max_epochs: usize,
    /// Train one model on all SNR points with the SNR-weighted loss instead
    /// of one dedicated model per point.
    pub mixed_snr: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            lr_decay_factor: t.lr_decay_factor,
            decay_patience: t.decay_patience,
            stop_patience: t.stop_patience,
            max_epochs: t.max_epochs,
            mixed_snr: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub cnn_blocks: Option<usize>,
    pub cnn_filters: Option<usize>,
    pub fnn_hidden: Option<Vec<usize>>,
    pub fnn_att_features: Option<usize>,
    pub fnn_att_channels: Option<usize>,
    pub mmse_region_width_deg: Option<f64>,
    pub mmse_sine_sharing: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Estimator tags: ls, mmse-single, mmse-regional, separate-ls, cnn,
    /// cnn-att, fnn, fnn-att.
    pub estimators: Vec<String>,
    /// SNR points to evaluate (default: the whole dataset schedule). Must be
    /// a subset of the schedule.
    pub snr_db: Option<Vec<f64>>,
    /// Dataset-level sweep axes; each combination regenerates the dataset.
    pub angular_spread_deg: Option<Vec<f64>>,
    pub n_antennas: Option<Vec<usize>>,
    /// RF chains as a fraction of N (M = round(N * fraction)).
    pub rf_fraction: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.estimators.is_empty() {
            return Err(Error::Config("grid.estimators: empty list".into()));
        }
        for tag in &self.grid.estimators {
            let Some(kind) = EstimatorKind::parse(tag) else {
                return Err(Error::Config(format!(
                    "grid.estimators: unknown estimator '{tag}'"
                )));
            };
            let full_array_only = matches!(
                kind,
                EstimatorKind::Ls
                    | EstimatorKind::MmseSingle
                    | EstimatorKind::MmseRegional { .. }
            );
            if full_array_only && self.experiment.mode == ObsMode::Had {
                return Err(Error::Config(format!(
                    "grid.estimators: '{tag}' needs full-array observations, but experiment.mode is had"
                )));
            }
        }
        if self.dataset.snr_db.is_empty() {
            return Err(Error::Config("dataset.snr_db: empty schedule".into()));
        }
        if let Some(evals) = &self.grid.snr_db {
            for s in evals {
                if !self.dataset.snr_db.iter().any(|d| (d - s).abs() < 1e-9) {
                    return Err(Error::Config(format!(
                        "grid.snr_db: {s} dB is not in dataset.snr_db"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The base system the experiment starts from (scale preset plus
    /// overrides); sweep axes refine it per grid point.
    pub fn resolved_system(&self) -> SystemConfig {
        let mut cfg = match self.experiment.scale {
            Scale::Desk => SystemConfig::desk(),
            Scale::Paper => SystemConfig::paper(),
        };
        let s = &self.system;
        if let Some(v) = s.n_antennas {
            cfg.n_antennas = v;
        }
        if let Some(v) = s.n_rf_chains {
            cfg.n_rf_chains = v;
        }
        if let Some(v) = s.n_users {
            cfg.n_users = v;
        }
        if let Some(v) = s.pilot_len {
            cfg.pilot_len = v;
        }
        if let Some(v) = s.n_paths {
            cfg.n_paths = v;
        }
        if let Some(v) = s.angular_spread_deg {
            cfg.angular_spread = v.to_radians();
        }
        cfg.snr_db = self.dataset.snr_db.clone();
        cfg.master_seed = self.experiment.seed;
        cfg
    }

    fn resolve_archs(&self) -> (CnnArch, FnnArch, FnnAttArch) {
        let mut cnn = match self.experiment.scale {
            Scale::Desk => CnnArch::desk(),
            Scale::Paper => CnnArch::default(),
        };
        if let Some(v) = self.arch.cnn_blocks {
            cnn.n_blocks = v;
        }
        if let Some(v) = self.arch.cnn_filters {
            cnn.filters = v;
        }
        let mut fnn = match self.experiment.mode {
            ObsMode::FullArray => FnnArch::full_array(),
            ObsMode::Had => FnnArch::default(),
        };
        if let Some(v) = &self.arch.fnn_hidden {
            fnn.hidden = v.clone();
        }
        let mut fnn_att = match self.experiment.scale {
            Scale::Desk => FnnAttArch::desk(),
            Scale::Paper => FnnAttArch::default(),
        };
        if let Some(v) = self.arch.fnn_att_features {
            fnn_att.features = v;
        }
        if let Some(v) = self.arch.fnn_att_channels {
            fnn_att.channels = v;
        }
        (cnn, fnn, fnn_att)
    }

    /// Estimator kind for a tag, with architecture fields resolved from the
    /// scale preset and the `[arch]` overrides.
    pub fn resolve_estimator(&self, tag: &str) -> Result<EstimatorKind> {
        let (cnn, fnn, fnn_att) = self.resolve_archs();
        let mut kind = EstimatorKind::parse(tag)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{tag}'")))?;
        match &mut kind {
            EstimatorKind::Cnn { arch } | EstimatorKind::CnnAtt { arch } => *arch = cnn,
            EstimatorKind::Fnn { arch } => *arch = fnn,
            EstimatorKind::FnnAtt { arch } => *arch = fnn_att,
            EstimatorKind::MmseRegional {
                region_width_deg,
                sine_sharing,
            } => {
                if let Some(v) = self.arch.mmse_region_width_deg {
                    *region_width_deg = v;
                }
                if let Some(v) = self.arch.mmse_sine_sharing {
                    *sine_sharing = v;
                }
            }
            _ => {}
        }
        Ok(kind)
    }
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub n_antennas: usize,
    pub n_rf_chains: usize,
    pub angular_spread_deg: f64,
    pub snr_db: f64,
    pub mse_linear: f64,
    pub mse_db: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    pub point_hash: String,
    pub train_epochs: Option<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultBundle {
    pub experiment: String,
    pub seed: u64,
    pub mode: ObsMode,
    pub config_hash: String,
    pub version: String,
    pub rows: Vec<ResultRow>,
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha_hex(serde_json::to_string(cfg)?.as_bytes()))
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Progress callback events, for the CLI to render.
pub type ProgressFn<'a> = dyn Fn(&str) + 'a;

#[derive(Serialize)]
struct PointDescriptor<'a> {
    estimator: &'a EstimatorKind,
    system: &'a SystemConfig,
    mode: ObsMode,
    dataset_count: usize,
    eval_snr_db: &'a [f64],
    train: &'a TrainSection,
    version: &'a str,
}

/// Runs every grid point, reusing any cached point results under
/// `out_dir/points/`, and returns the assembled bundle.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    progress: &ProgressFn<'_>,
) -> Result<ResultBundle> {
    cfg.validate()?;
    let version = env!("CARGO_PKG_VERSION");
    let points_dir = out_dir.join("points");
    std::fs::create_dir_all(&points_dir)?;

    let base = cfg.resolved_system();
    let mode = cfg.experiment.mode;
    let eval_snrs: Vec<f64> = cfg
        .grid
        .snr_db
        .clone()
        .unwrap_or_else(|| cfg.dataset.snr_db.clone());

    // Dataset-level axes.
    let spreads = cfg
        .grid
        .angular_spread_deg
        .clone()
        .unwrap_or_else(|| vec![base.angular_spread.to_degrees()]);
    let antenna_counts = cfg
        .grid
        .n_antennas
        .clone()
        .unwrap_or_else(|| vec![base.n_antennas]);
    let rf_fractions = cfg
        .grid
        .rf_fraction
        .clone()
        .unwrap_or_else(|| vec![base.n_rf_chains as f64 / base.n_antennas as f64]);

    let mut rows = Vec::new();
    for &spread_deg in &spreads {
        for &n in &antenna_counts {
            for &frac in &rf_fractions {
                let mut sys = base.clone();
                sys.n_antennas = n;
                sys.n_rf_chains = ((n as f64 * frac).round() as usize).clamp(1, n);
                sys.angular_spread = spread_deg.to_radians();
                sys.validate()?;

                let mut splits: Option<(
                    crate::channel::Dataset,
                    crate::channel::Dataset,
                    crate::channel::Dataset,
                )> = None;

                for tag in &cfg.grid.estimators {
                    let kind = cfg.resolve_estimator(tag)?;
                    let descriptor = PointDescriptor {
                        estimator: &kind,
                        system: &sys,
                        mode,
                        dataset_count: cfg.dataset.count,
                        eval_snr_db: &eval_snrs,
                        train: &cfg.train,
                        version,
                    };
                    let point_hash = sha_hex(serde_json::to_string(&descriptor)?.as_bytes());
                    let point_file = points_dir.join(format!("{point_hash}.json"));
                    if point_file.exists() {
                        progress(&format!("point {tag} @ N={n}: cached ({point_hash})"));
                        let cached: Vec<ResultRow> =
                            serde_json::from_str(&std::fs::read_to_string(&point_file)?)?;
                        rows.extend(cached);
                        continue;
                    }

                    if splits.is_none() {
                        progress(&format!(
                            "generating dataset: N={n} M={} spread={spread_deg} deg count={}",
                            sys.n_rf_chains, cfg.dataset.count
                        ));
                        splits = Some(generate_splits(&sys, mode, cfg.dataset.count)?);
                    }
                    let (train_ds, val_ds, test_ds) = splits.as_ref().unwrap();

                    progress(&format!("running {tag} @ N={n} spread={spread_deg} deg"));
                    let started = std::time::Instant::now();
                    let point_rows = run_point(
                        cfg,
                        &kind,
                        &sys,
                        mode,
                        train_ds,
                        val_ds,
                        test_ds,
                        &eval_snrs,
                        &point_hash,
                        spread_deg,
                        progress,
                    )?;
                    let _elapsed = started.elapsed();
                    let tmp = point_file.with_extension("json.tmp");
                    std::fs::write(&tmp, serde_json::to_string_pretty(&point_rows)?)?;
                    std::fs::rename(&tmp, &point_file)?;
                    rows.extend(point_rows);
                }
            }
        }
    }

    Ok(ResultBundle {
        experiment: cfg.experiment.name.clone(),
        seed: cfg.experiment.seed,
        mode,
        config_hash: config_hash(cfg)?,
        version: version.to_string(),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_point(
    cfg: &ExperimentConfig,
    kind: &EstimatorKind,
    sys: &SystemConfig,
    mode: ObsMode,
    train_ds: &crate::channel::Dataset,
    val_ds: &crate::channel::Dataset,
    test_ds: &crate::channel::Dataset,
    eval_snrs: &[f64],
    point_hash: &str,
    spread_deg: f64,
    progress: &ProgressFn<'_>,
) -> Result<Vec<ResultRow>> {
    let eval_slots: Vec<usize> = eval_snrs
        .iter()
        .map(|s| {
            test_ds
                .snr_slot(*s)
                .ok_or_else(|| Error::Config(format!("eval SNR {s} missing from dataset")))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let push_report = |report: crate::harness::MseReport,
                           rows: &mut Vec<ResultRow>,
                           epochs: Option<usize>,
                           wall: f64| {
        for r in report.rows {
            rows.push(ResultRow {
                estimator: report.estimator.clone(),
                n_antennas: sys.n_antennas,
                n_rf_chains: sys.n_rf_chains,
                angular_spread_deg: spread_deg,
                snr_db: r.snr_db,
                mse_linear: r.mse_linear,
                mse_db: r.mse_db,
                stderr: r.stderr,
                n: r.n,
                seed: cfg.experiment.seed,
                point_hash: point_hash.to_string(),
                train_epochs: epochs,
                wall_time_s: wall,
            });
        }
    };

    let started = std::time::Instant::now();
    if kind.is_neural() {
        let spec = crate::estimators::spec_for(kind, sys, mode)?;
        let base_train = TrainConfig {
            batch_size: cfg.train.batch_size,
            initial_lr: cfg.train.initial_lr,
            lr_decay_factor: cfg.train.lr_decay_factor,
            decay_patience: cfg.train.decay_patience,
            stop_patience: cfg.train.stop_patience,
            max_epochs: cfg.train.max_epochs,
            loss: LossKind::Mse,
            seed: cfg.experiment.seed,
        };
        if cfg.train.mixed_snr {
            let all_slots: Vec<usize> = (0..train_ds.snr_points().len()).collect();
            let norm = TrainingData::fit_normalizer(train_ds, &all_slots)?;
            let train_data = TrainingData::assemble(train_ds, &all_slots, &norm)?;
            let val_data = TrainingData::assemble(val_ds, &all_slots, &norm)?;
            let mut model = Model::<f32>::new(spec, cfg.experiment.seed)?;
            let tcfg = TrainConfig {
                loss: LossKind::WeightedMse,
                ..base_train
            };
            let report = train_mixed_snr(&mut model, &train_data, &val_data, &tcfg)?;
            progress(&format!(
                "  mixed-SNR training: {} epochs, best val {:.4e}",
                report.stopped_epoch, report.best_val_loss
            ));
            let est = NeuralEstimator::new(
                kind.clone(),
                mode,
                sys.n_antennas,
                model,
                norm,
            );
            let mse = evaluate_mse(&est, test_ds, &eval_slots)?;
            push_report(
                mse,
                &mut rows,
                Some(report.stopped_epoch),
                started.elapsed().as_secs_f64(),
            );
        } else {
            for &slot in &eval_slots {
                let t0 = std::time::Instant::now();
                let norm = TrainingData::fit_normalizer(train_ds, &[slot])?;
                let train_data = TrainingData::assemble(train_ds, &[slot], &norm)?;
                let val_data = TrainingData::assemble(val_ds, &[slot], &norm)?;
                let mut model = Model::<f32>::new(spec.clone(), cfg.experiment.seed)?;
                let report = train(&mut model, &train_data, &val_data, &base_train)?;
                progress(&format!(
                    "  trained @ {} dB: {} epochs, best val {:.4e}",
                    train_ds.snr_points()[slot],
                    report.stopped_epoch,
                    report.best_val_loss
                ));
                let est = NeuralEstimator::new(
                    kind.clone(),
                    mode,
                    sys.n_antennas,
                    model,
                    norm,
                );
                let mse = evaluate_mse(&est, test_ds, &[slot])?;
                push_report(
                    mse,
                    &mut rows,
                    Some(report.stopped_epoch),
                    t0.elapsed().as_secs_f64(),
                );
            }
        }
    } else {
        let noise_vars: Vec<f64> = eval_snrs
            .iter()
            .map(|s| SystemConfig::noise_var(*s))
            .collect();
        let est: Box<dyn Estimator> = match kind {
            EstimatorKind::Ls => Box::new(LsEstimator::new(sys.n_antennas)),
            EstimatorKind::MmseSingle => {
                let bank = CcmBank::fit_single(&train_ds.samples)?;
                Box::new(MmseSingle::new(bank.single()?, &noise_vars)?)
            }
            EstimatorKind::MmseRegional {
                region_width_deg,
                sine_sharing,
            } => {
                let bank = CcmBank::fit(&train_ds.samples, *region_width_deg, *sine_sharing)?;
                Box::new(MmseRegional::new(&bank, &noise_vars)?)
            }
            EstimatorKind::SeparateLs => Box::new(SeparateLsEstimator::new(
                sys.n_antennas,
                sys.n_rf_chains,
                cfg.experiment.seed,
            )),
            _ => unreachable!("neural kinds handled above"),
        };
        let mse = evaluate_mse(est.as_ref(), test_ds, &eval_slots)?;
        push_report(mse, &mut rows, None, started.elapsed().as_secs_f64());
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

// Wall time stays in the JSON bundle only: the CSV is a deterministic
// function of (config, seed).
const CSV_HEADER: &str = "estimator,n_antennas,n_rf_chains,angular_spread_deg,snr_db,mse_linear,mse_db,stderr,n,seed,point_hash,train_epochs";

fn row_csv(r: &ResultRow) -> String {
    format!(
        "{},{},{},{},{},{:.12e},{:.12e},{:.12e},{},{},{},{}",
        r.estimator,
        r.n_antennas,
        r.n_rf_chains,
        r.angular_spread_deg,
        r.snr_db,
        r.mse_linear,
        r.mse_db,
        r.stderr,
        r.n,
        r.seed,
        r.point_hash,
        r.train_epochs.map_or(String::new(), |e| e.to_string())
    )
}

/// Parses one emitted CSV row back (used by round-trip checks and `report`).
pub fn parse_csv_row(line: &str) -> Result<ResultRow> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 12 {
        return Err(Error::Format(format!(
            "csv row has {} fields, expected 12",
            parts.len()
        )));
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad float '{s}'")))
    };
    let parse_u = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad integer '{s}'")))
    };
    Ok(ResultRow {
        estimator: parts[0].to_string(),
        n_antennas: parse_u(parts[1])?,
        n_rf_chains: parse_u(parts[2])?,
        angular_spread_deg: parse_f(parts[3])?,
        snr_db: parse_f(parts[4])?,
        mse_linear: parse_f(parts[5])?,
        mse_db: parse_f(parts[6])?,
        stderr: parse_f(parts[7])?,
        n: parse_u(parts[8])?,
        seed: parts[9]
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?,
        point_hash: parts[10].to_string(),
        train_epochs: if parts[11].is_empty() {
            None
        } else {
            Some(parse_u(parts[11])?)
        },
        wall_time_s: 0.0,
    })
}

/// Writes the bundle as `results.json`, `results.csv` (long format), and
/// plot-ready per-figure CSVs for every axis the grid actually swept.
pub fn emit_outputs(bundle: &ResultBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let json_path = out_dir.join("results.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(bundle)?)?;
    written.push(json_path);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &bundle.rows {
        csv.push_str(&row_csv(r));
        csv.push('\n');
    }
    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, &csv)?;
    written.push(csv_path);

    // Figure CSVs: one per swept axis.
    let axis = |name: &str, f: &dyn Fn(&ResultRow) -> f64| -> (String, usize) {
        let values: BTreeSet<u64> = bundle.rows.iter().map(|r| f(r).to_bits()).collect();
        (name.to_string(), values.len())
    };
    let mut figures: Vec<(&str, Box<dyn Fn(&ResultRow) -> f64>)> =
        vec![("snr", Box::new(|r: &ResultRow| r.snr_db))];
    let (_, n_spreads) = axis("spread", &|r| r.angular_spread_deg);
    if n_spreads > 1 {
        figures.push(("spread", Box::new(|r: &ResultRow| r.angular_spread_deg)));
    }
    let (_, n_ants) = axis("n", &|r| r.n_antennas as f64);
    if n_ants > 1 {
        figures.push(("antennas", Box::new(|r: &ResultRow| r.n_antennas as f64)));
    }
    let (_, n_rf) = axis("rf", &|r| r.n_rf_chains as f64 / r.n_antennas as f64);
    if n_rf > 1 {
        figures.push((
            "rf-fraction",
            Box::new(|r: &ResultRow| r.n_rf_chains as f64 / r.n_antennas as f64),
        ));
    }
    for (name, f) in figures {
        let mut fig = String::from("x,estimator,mse_linear,mse_db,stderr,n\n");
        let mut sorted: Vec<&ResultRow> = bundle.rows.iter().collect();
        sorted.sort_by(|a, b| {
            f(a).partial_cmp(&f(b))
                .unwrap()
                .then_with(|| a.estimator.cmp(&b.estimator))
        });
        for r in sorted {
            fig.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e},{}\n",
                f(r),
                r.estimator,
                r.mse_linear,
                r.mse_db,
                r.stderr,
                r.n
            ));
        }
        let path = out_dir.join(format!("mse_vs_{name}.csv"));
        std::fs::write(&path, fig)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_toml() -> String {
        r#"
[experiment]
name = "smoke"
seed = 9
scale = "desk"
mode = "full-array"

[system]
n_antennas = 16
n_rf_chains = 4
n_paths = 4

[dataset]
count = 50
snr_db = [0.0, 10.0, 20.0]

[grid]
estimators = ["ls", "mmse-single"]
snr_db = [0.0, 10.0, 20.0]
"#
        .to_string()
    }

    #[test]
    fn grid_product_yields_expected_rows() {
        let cfg = ExperimentConfig::from_toml(&tiny_toml()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&cfg, dir.path(), &|_| {}).unwrap();
        // 2 estimators x 3 SNR points.
        assert_eq!(bundle.rows.len(), 6);
        let tags: BTreeSet<&str> = bundle.rows.iter().map(|r| r.estimator.as_str()).collect();
        assert!(tags.contains("ls"));
        assert!(tags.contains("mmse-single"));
    }

    #[test]
    fn rerun_hits_the_point_cache() {
        let cfg = ExperimentConfig::from_toml(&tiny_toml()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&cfg, dir.path(), &|_| {}).unwrap();

        let cached = std::cell::Cell::new(0);
        let b = run_experiment(&cfg, dir.path(), &|msg: &str| {
            if msg.contains("cached") {
                cached.set(cached.get() + 1);
            }
        })
        .unwrap();
        assert_eq!(cached.get(), 2, "both points should be cache hits");
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(ra.mse_linear.to_bits(), rb.mse_linear.to_bits());
        }
    }

    #[test]
    fn rejects_unknown_keys_and_estimators() {
        let bad = tiny_toml().replace("[dataset]", "[dataset]\nnot_a_key = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");

        let bad = tiny_toml().replace("\"ls\"", "\"nonsense\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());

        let bad = tiny_toml().replace("snr_db = [0.0, 10.0, 20.0]\n\n[grid]", "snr_db = [0.0]\n\n[grid]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn empty_bundle_emits_header_only_csv() {
        let bundle = ResultBundle {
            experiment: "empty".into(),
            seed: 0,
            mode: ObsMode::FullArray,
            config_hash: "0".into(),
            version: "test".into(),
            rows: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&bundle, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.trim(), CSV_HEADER);
    }

    #[test]
    fn csv_rows_roundtrip() {
        let row = ResultRow {
            estimator: "cnn-att".into(),
            n_antennas: 64,
            n_rf_chains: 16,
            angular_spread_deg: 5.0,
            snr_db: 12.5,
            mse_linear: 0.123456789,
            mse_db: -9.0848501887,
            stderr: 0.002,
            n: 4000,
            seed: 7,
            point_hash: "abc123".into(),
            train_epochs: Some(42),
            wall_time_s: 3.25,
        };
        let parsed = parse_csv_row(&row_csv(&row)).unwrap();
        assert_eq!(parsed.estimator, row.estimator);
        assert!((parsed.mse_linear - row.mse_linear).abs() < 1e-15);
        assert!((parsed.mse_db - row.mse_db).abs() < 1e-12);
        assert_eq!(parsed.train_epochs, Some(42));
    }

    #[test]
    fn db_column_is_ten_log_ten() {
        let cfg = ExperimentConfig::from_toml(&tiny_toml()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&cfg, dir.path(), &|_| {}).unwrap();
        for r in &bundle.rows {
            assert!((r.mse_db - 10.0 * r.mse_linear.log10()).abs() < 1e-9);
        }
    }
}
