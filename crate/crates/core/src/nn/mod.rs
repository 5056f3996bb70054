//! Minimal reverse-mode autodiff engine with exactly the layer set the
//! estimation networks need, plus Xavier initialization, the Adam optimizer,
//! and the (weighted) MSE losses.

mod adam;
pub mod gradcheck;
mod init;
mod layers;
mod loss;
mod model;
mod tensor;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use init::{xavier_bound, xavier_fill};
pub use layers::{
    Attention, AttentionCapture, BatchNorm, Conv1d, Dense, Flatten, GlobalAvgPool, LayerSpec,
    LayerState, Relu, Reshape, Sigmoid, BN_EPS, BN_MOMENTUM,
};
pub use loss::{loss_mse, loss_weighted_mse};
pub use model::{Model, ModelSpec, ParamCounts, CHECKPOINT_FORMAT_VERSION};
pub use tensor::{Real, Tensor};
