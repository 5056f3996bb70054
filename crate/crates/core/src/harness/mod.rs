//! Dataset pipeline, training loop (plateau LR decay, early stopping, mixed
//! SNR), and MSE evaluation.

mod data;
mod eval;
mod train;

pub use data::{build_dataset, generate_splits, DatasetSplits, TrainingData};
pub use eval::{evaluate_mse, MseReport, MseRow};
pub use train::{
    train, train_mixed_snr, EpochRecord, LossKind, PlateauAction, PlateauSchedule, TrainConfig,
    TrainReport,
};
