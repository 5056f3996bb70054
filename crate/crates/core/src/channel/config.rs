//! System, channel, and generation knobs shared by the whole lab.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All system/channel parameters for one simulated cell.
///
/// Angles are radians. SNR is in dB; pilot power is fixed to unit, so a point
/// at `s` dB means noise variance `10^(-s/10)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas (N).
    pub n_antennas: usize,
    /// RF chains (M) available under hybrid analog-digital reception.
    pub n_rf_chains: usize,
    /// Users (K).
    pub n_users: usize,
    /// Pilot sequence length (L_p), at least K.
    pub pilot_len: usize,
    /// Propagation paths per user channel (N_p).
    pub n_paths: usize,
    /// Angular spread: every path AoA lies within this half-width of the
    /// user's mean AoA (radians).
    pub angular_spread: f64,
    /// SNR grid in dB; a dataset carries one observation per point.
    pub snr_db: Vec<f64>,
    /// Master seed; all random streams are derived from it.
    pub master_seed: u64,
}

impl SystemConfig {
    /// Full-scale parameters: N=128, M=32, N_p=20, spread 5 degrees, 20 dB.
    pub fn paper() -> Self {
        Self {
            n_antennas: 128,
            n_rf_chains: 32,
            n_users: 10,
            pilot_len: 10,
            n_paths: 20,
            angular_spread: 5f64.to_radians(),
            snr_db: vec![20.0],
            master_seed: 1,
        }
    }

    /// Desk-scale parameters: everything shrunk so a CPU run finishes in
    /// minutes (N=64, M=16), channel statistics unchanged.
    pub fn desk() -> Self {
        Self {
            n_antennas: 64,
            n_rf_chains: 16,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::Config("n_antennas must be >= 1".into()));
        }
        if self.n_rf_chains == 0 || self.n_rf_chains > self.n_antennas {
            return Err(Error::Config(format!(
                "need 1 <= n_rf_chains <= n_antennas, got M={}, N={}",
                self.n_rf_chains, self.n_antennas
            )));
        }
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be >= 1".into()));
        }
        if self.pilot_len < self.n_users {
            return Err(Error::Config(format!(
                "pilot_len {} shorter than n_users {}",
                self.pilot_len, self.n_users
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be >= 1".into()));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.angular_spread) {
            return Err(Error::Config(format!(
                "angular_spread must be in [0, pi/2), got {}",
                self.angular_spread
            )));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("snr_db grid is empty".into()));
        }
        Ok(())
    }

    /// Noise variance for an SNR point under unit pilot power.
    pub fn noise_var(snr_db: f64) -> f64 {
        10f64.powf(-snr_db / 10.0)
    }

    /// Linear SNR for a dB point.
    pub fn snr_linear(snr_db: f64) -> f64 {
        10f64.powf(snr_db / 10.0)
    }
}
