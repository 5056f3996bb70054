//! The training loop: shuffled mini-batch Adam with validation-plateau
//! learning-rate decay, early stopping, and best-epoch weight restoration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{loss_mse, loss_weighted_mse, AdamState, Model, Tensor};
use crate::numerics::{RngStream, StreamDomain};

use super::TrainingData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    /// Per-sample squared error weighted by linear SNR (mixed-SNR training).
    WeightedMse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs without validation improvement before the LR decays.
    pub decay_patience: usize,
    /// Epochs without validation improvement before training stops.
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    /// Seed for epoch shuffling (independent of model init and data).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            initial_lr: 1e-3,
            lr_decay_factor: 0.1,
            decay_patience: 10,
            stop_patience: 25,
            max_epochs: 500,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if self.stop_patience <= self.decay_patience {
            return Err(Error::Config(
                "stop_patience must exceed decay_patience".into(),
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config("lr_decay_factor must be in (0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the plateau tracker decided after one validation reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauAction {
    pub improved: bool,
    pub decay: bool,
    pub stop: bool,
}

/// Plateau semantics: "no decrease" is measured against the best value so
/// far. The decay counter resets on improvement or decay (so a stagnant run
/// decays again every `decay_patience` epochs); the stop counter resets only
/// on improvement.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    decay_patience: usize,
    stop_patience: usize,
    best: f64,
    since_best: usize,
    decay_wait: usize,
}

impl PlateauSchedule {
    pub fn new(decay_patience: usize, stop_patience: usize) -> Self {
        Self {
            decay_patience,
            stop_patience,
            best: f64::INFINITY,
            since_best: 0,
            decay_wait: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, val_loss: f64) -> PlateauAction {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            self.decay_wait = 0;
            return PlateauAction {
                improved: true,
                decay: false,
                stop: false,
            };
        }
        self.since_best += 1;
        self.decay_wait += 1;
        let mut action = PlateauAction {
            improved: false,
            decay: false,
            stop: false,
        };
        if self.decay_wait >= self.decay_patience {
            action.decay = true;
            self.decay_wait = 0;
        }
        if self.since_best >= self.stop_patience {
            action.stop = true;
        }
        action
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub lr_decay_epochs: Vec<usize>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// Loss curves as CSV: `epoch,train_loss,val_loss,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.10e},{:.10e},{:.10e}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr
            ));
        }
        out
    }
}

fn gather_batch(
    data: &TrainingData,
    idx: &[usize],
) -> (Tensor<f32>, Tensor<f32>, Vec<f64>) {
    let b = idx.len();
    let mut shape = vec![b];
    shape.extend(&data.input_shape);
    let mut feats = Vec::with_capacity(b * data.feature_width);
    let mut targets = Vec::with_capacity(b * data.target_width);
    let mut weights = Vec::with_capacity(b);
    for &i in idx {
        feats.extend_from_slice(data.feature_row(i));
        targets.extend_from_slice(data.target_row(i));
        weights.push(data.snr_linear[i]);
    }
    (
        Tensor::new(shape, feats),
        Tensor::new(vec![b, data.target_width], targets),
        weights,
    )
}

fn batch_loss(
    model_out: &Tensor<f32>,
    target: &Tensor<f32>,
    weights: &[f64],
    kind: LossKind,
) -> Result<(f64, Tensor<f32>)> {
    match kind {
        LossKind::Mse => loss_mse(model_out, target),
        LossKind::WeightedMse => loss_weighted_mse(model_out, target, weights),
    }
}

/// Mean loss of a frozen model over a split (evaluation mode, batched).
pub fn eval_loss(model: &Model<f32>, data: &TrainingData, kind: LossKind) -> Result<f64> {
    if data.rows == 0 {
        return Err(Error::Config("eval_loss: empty split".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let all: Vec<usize> = (0..data.rows).collect();
    for chunk in all.chunks(512) {
        let (x, y, w) = gather_batch(data, chunk);
        let out = model.infer(&x)?;
        let (loss, _) = batch_loss(&out, &y, &w, kind)?;
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Trains `model` on `train_data`, tracking `val_data` after every epoch:
/// the LR decays by the configured factor on a `decay_patience` plateau,
/// training stops on a `stop_patience` plateau (or at `max_epochs`), and the
/// best-epoch weights (and batch-norm statistics) are restored before
/// returning.
pub fn train(
    model: &mut Model<f32>,
    train_data: &TrainingData,
    val_data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_data.rows < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch size {} exceeds training split of {} rows",
            cfg.batch_size, train_data.rows
        )));
    }
    let started = Instant::now();
    let mut adam = AdamState::new(cfg.initial_lr);
    let mut schedule = PlateauSchedule::new(cfg.decay_patience, cfg.stop_patience);
    let mut report = TrainReport {
        epochs: Vec::new(),
        lr_decay_epochs: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        wall_time_s: 0.0,
    };
    let mut best_snapshot: Option<Vec<Vec<f32>>> = None;
    let mut indices: Vec<usize> = (0..train_data.rows).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut shuffle = RngStream::for_ordinal(cfg.seed, StreamDomain::Shuffle, epoch as u64);
        shuffle.shuffle(&mut indices);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                // Batch norm cannot normalize a singleton; skip the remnant.
                continue;
            }
            let (x, y, w) = gather_batch(train_data, chunk);
            model.zero_grads();
            let out = model.forward_train(&x)?;
            let (loss, dloss) = batch_loss(&out, &y, &w, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "diverged: non-finite training loss at epoch {epoch}"
                )));
            }
            model.backward(&dloss)?;
            adam.step(&mut model.params_mut())?;
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = eval_loss(model, val_data, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Train(format!(
                "diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.learning_rate,
        });

        let action = schedule.update(val_loss);
        if action.improved {
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
            best_snapshot = Some(model.snapshot());
        }
        if action.decay {
            adam.learning_rate *= cfg.lr_decay_factor;
            report.lr_decay_epochs.push(epoch);
        }
        report.stopped_epoch = epoch;
        if action.stop {
            break;
        }
    }

    if let Some(snap) = &best_snapshot {
        model.restore(snap)?;
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Mixed-SNR training: identical loop, with the loss weighted by each
/// sample's linear SNR. The data must actually contain more than one SNR
/// point (otherwise plain [`train`] is the right call) and the loss kind must
/// be the weighted one.
pub fn train_mixed_snr(
    model: &mut Model<f32>,
    train_data: &TrainingData,
    val_data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.loss != LossKind::WeightedMse {
        return Err(Error::Config(
            "mixed-SNR training requires the weighted-mse loss".into(),
        ));
    }
    let mut tags: Vec<u64> = train_data.snr_db.iter().map(|s| s.to_bits()).collect();
    tags.sort_unstable();
    tags.dedup();
    if tags.len() < 2 {
        return Err(Error::Config(
            "mixed-SNR training needs samples from more than one SNR point".into(),
        ));
    }
    train(model, train_data, val_data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Dataset, ObsMode, SystemConfig};
    use crate::estimators::{build_fnn_att_spec, FnnAttArch};
    use crate::harness::TrainingData;

    #[test]
    fn plateau_decays_at_ten_and_stops_at_twenty_five() {
        let mut sched = PlateauSchedule::new(10, 25);
        assert!(sched.update(1.0).improved);
        let mut decay_epochs = Vec::new();
        let mut stop_epoch = None;
        for k in 1..=30 {
            let action = sched.update(1.0); // stagnant forever
            if action.decay {
                decay_epochs.push(k);
            }
            if action.stop {
                stop_epoch = Some(k);
                break;
            }
        }
        assert_eq!(decay_epochs, vec![10, 20]);
        assert_eq!(stop_epoch, Some(25));
    }

    #[test]
    fn improving_validation_never_decays() {
        let mut sched = PlateauSchedule::new(10, 25);
        for k in 0..100 {
            let action = sched.update(1.0 / (k + 1) as f64);
            assert!(action.improved);
            assert!(!action.decay);
            assert!(!action.stop);
        }
    }

    #[test]
    fn plateau_counts_from_best_not_previous() {
        let mut sched = PlateauSchedule::new(3, 8);
        sched.update(1.0);
        sched.update(2.0); // worse
        sched.update(1.5); // better than previous but not than best
        let a3 = sched.update(1.9);
        assert!(a3.decay, "three epochs past best must decay");
    }

    fn tiny_training_setup() -> (crate::nn::Model<f32>, TrainingData, TrainingData) {
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = 8;
        cfg.n_rf_chains = 4;
        cfg.n_paths = 3;
        cfg.snr_db = vec![20.0];
        cfg.master_seed = 42;
        let train_ds = Dataset::generate(&cfg, ObsMode::Had, 32, 0).unwrap();
        let val_ds = Dataset::generate(&cfg, ObsMode::Had, 8, 32).unwrap();
        let norm = TrainingData::fit_normalizer(&train_ds, &[0]).unwrap();
        let train_data = TrainingData::assemble(&train_ds, &[0], &norm).unwrap();
        let val_data = TrainingData::assemble(&val_ds, &[0], &norm).unwrap();
        let arch = FnnAttArch {
            features: 8,
            channels: 32,
            ratio: 2,
        };
        let spec = build_fnn_att_spec(&arch, 8, 8).unwrap();
        let model = crate::nn::Model::<f32>::new(spec, 7).unwrap();
        (model, train_data, val_data)
    }

    #[test]
    fn overfits_a_toy_dataset() {
        // Full-batch so the batch-norm statistics are fixed and the 32
        // samples can actually be memorized.
        let (mut model, train_data, val_data) = tiny_training_setup();
        let cfg = TrainConfig {
            batch_size: 32,
            initial_lr: 3e-3,
            max_epochs: 500,
            stop_patience: 500,
            decay_patience: 499,
            seed: 1,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &train_data, &val_data, &cfg).unwrap();
        let final_train = report.epochs.last().unwrap().train_loss;
        let best_train = report
            .epochs
            .iter()
            .map(|e| e.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(
            best_train < 1e-3,
            "failed to overfit: best {best_train}, final {final_train}"
        );
    }

    #[test]
    fn best_weights_are_restored() {
        let (mut model, train_data, val_data) = tiny_training_setup();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 40,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &train_data, &val_data, &cfg).unwrap();
        let revalidated = eval_loss(&model, &val_data, cfg.loss).unwrap();
        assert_eq!(
            revalidated.to_bits(),
            report.best_val_loss.to_bits(),
            "restored model does not reproduce best validation loss"
        );
        assert!(
            (report.best_val_loss
                - report
                    .epochs
                    .iter()
                    .map(|e| e.val_loss)
                    .fold(f64::INFINITY, f64::min))
            .abs()
                == 0.0
        );
    }

    #[test]
    fn training_is_reproducible() {
        let (mut m1, train_data, val_data) = tiny_training_setup();
        let (mut m2, _, _) = tiny_training_setup();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let r1 = train(&mut m1, &train_data, &val_data, &cfg).unwrap();
        let r2 = train(&mut m2, &train_data, &val_data, &cfg).unwrap();
        for (a, b) in r1.epochs.iter().zip(r2.epochs.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        }
    }

    #[test]
    fn constant_weights_scale_plain_loss() {
        // All samples at one SNR: weighted loss = snr_lin * plain loss.
        let (model, train_data, _) = tiny_training_setup();
        let all: Vec<usize> = (0..train_data.rows).collect();
        let (x, y, w) = super::gather_batch(&train_data, &all);
        let out = model.infer(&x).unwrap();
        let (plain, _) = loss_mse(&out, &y).unwrap();
        let (weighted, _) = loss_weighted_mse(&out, &y, &w).unwrap();
        let snr_lin = w[0];
        assert!(w.iter().all(|v| (*v - snr_lin).abs() < 1e-12));
        assert!(
            ((weighted - snr_lin * plain) / weighted).abs() < 1e-9,
            "weighted {weighted} vs {snr_lin} x {plain}"
        );
    }

    #[test]
    fn mixed_snr_requires_multiple_points_and_weighted_loss() {
        let (mut model, train_data, val_data) = tiny_training_setup();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            loss: LossKind::WeightedMse,
            seed: 4,
            ..TrainConfig::default()
        };
        // Single SNR point: rejected.
        assert!(train_mixed_snr(&mut model, &train_data, &val_data, &cfg).is_err());
        // Plain loss: rejected.
        let cfg_plain = TrainConfig {
            loss: LossKind::Mse,
            ..cfg
        };
        assert!(train_mixed_snr(&mut model, &train_data, &val_data, &cfg_plain).is_err());
    }
}
