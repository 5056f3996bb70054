//! Desk-scale laboratory for massive-MIMO uplink channel estimation.
//!
//! The crate simulates a single-cell uplink with an `N`-antenna uniform linear
//! array, generates geometric multipath channels with narrow angular spread,
//! and estimates those channels from noisy pilot observations, both with the
//! full antenna array and under hybrid analog-digital (HAD) combining where
//! only `M < N` RF chains observe the array through a Zadoff-Chu phase-shifter
//! network.
//!
//! Estimators live behind one interface: classical baselines (LS, MMSE with a
//! single or per-angular-region correlation matrix, separate LS under HAD) and
//! neural ones (a 1-D convolutional net and a fully connected net, each with
//! optional squeeze-excitation channel attention). The neural side runs on a
//! small self-contained reverse-mode autodiff engine, trained with Adam, Xavier
//! initialization, plateau learning-rate decay and early stopping.
//!
//! Module map:
//! - [`numerics`]: complex vectors/matrices, special matrices (shifted DFT,
//!   Zadoff-Chu combiner), Hermitian solver, counter-based RNG streams.
//! - [`channel`]: system configuration, channel sampling, pilot observation,
//!   dataset files.
//! - [`nn`]: tensors, layers, models, optimizer, losses, checkpoints.
//! - [`estimators`]: the estimator interface plus all implementations.
//! - [`harness`]: dataset splits, the training loop, MSE evaluation.
//! - [`analysis`]: closed-form complexity accounting, attention-map analysis,
//!   experiment orchestration and CSV/JSON emitters.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod nn;
pub mod numerics;

pub use error::{Error, Result};
