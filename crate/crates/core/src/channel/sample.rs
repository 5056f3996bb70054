//! Ground-truth channel generation.
//!
//! Each user channel is a sum of `N_p` paths with i.i.d. circular-normal
//! gains and AoAs drawn uniformly within the angular spread around a mean
//! AoA that is itself uniform on `[0, 2pi)`. The narrow spread makes the
//! angular-domain channel `x = F h` clustered-sparse.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::numerics::{dft_shift_matrix, steering_vector, CMatrix, CVector, RngStream, C64};

use super::SystemConfig;

/// One user's ground-truth channel with all generative parameters retained,
/// so later analysis can bucket by mean AoA.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    /// Per-path complex gains.
    pub gains: Vec<C64>,
    /// Per-path AoAs (radians).
    pub aoas: Vec<f64>,
    /// Mean AoA the paths cluster around.
    pub mean_aoa: f64,
    /// Antenna-domain channel, length N.
    pub h: CVector,
    /// Angular-domain channel `x = F h`, length N.
    pub x: CVector,
}

impl ChannelSample {
    /// Builds the channel from path parameters:
    /// `h = (1/sqrt(N_p)) sum_i gains[i] * a(aoas[i])`, `x = F h`.
    pub fn from_paths(gains: Vec<C64>, aoas: Vec<f64>, mean_aoa: f64, f: &CMatrix) -> Self {
        assert_eq!(gains.len(), aoas.len());
        assert!(!gains.is_empty());
        let n = f.cols();
        let scale = 1.0 / (gains.len() as f64).sqrt();
        let mut h = CVector::zeros(n);
        for (g, &theta) in gains.iter().zip(aoas.iter()) {
            let a = steering_vector(theta, n);
            for (hi, ai) in h.as_mut_slice().iter_mut().zip(a.iter()) {
                *hi += g * scale * ai;
            }
        }
        let x = f.matvec(&h);
        Self {
            gains,
            aoas,
            mean_aoa,
            h,
            x,
        }
    }

    /// Rebuilds a sample from stored fields, verifying that `h` matches the
    /// path parameters and `x` matches `F h` to `1e-10`. Used when loading
    /// datasets so corrupt or inconsistent files are rejected.
    pub fn from_parts(
        gains: Vec<C64>,
        aoas: Vec<f64>,
        mean_aoa: f64,
        h: CVector,
        x: CVector,
        f: &CMatrix,
    ) -> Result<Self> {
        let rebuilt = Self::from_paths(gains.clone(), aoas.clone(), mean_aoa, f);
        let scale = rebuilt.h.norm().max(1.0);
        // Negated comparisons so NaN payloads are rejected too.
        if !(rebuilt.h.sub(&h).norm() <= 1e-10 * scale) {
            return Err(Error::Format(
                "channel sample: h does not match its path parameters".into(),
            ));
        }
        if !(rebuilt.x.sub(&x).norm() <= 1e-10 * scale) {
            return Err(Error::Format(
                "channel sample: x does not match F h".into(),
            ));
        }
        Ok(Self {
            gains,
            aoas,
            mean_aoa,
            h,
            x,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.h.len()
    }
}

/// Reusable channel generator: precomputes the angular transform once.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    n_antennas: usize,
    n_paths: usize,
    angular_spread: f64,
    f: CMatrix,
}

impl ChannelModel {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            n_antennas: cfg.n_antennas,
            n_paths: cfg.n_paths,
            angular_spread: cfg.angular_spread,
            f: dft_shift_matrix(cfg.n_antennas),
        })
    }

    /// The angular transform `F` for this antenna count.
    pub fn transform(&self) -> &CMatrix {
        &self.f
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    /// Draws one channel: mean AoA uniform on `[0, 2pi)`, path AoAs uniform
    /// within the spread around it, gains i.i.d. CN(0, 1).
    pub fn sample(&self, stream: &mut RngStream) -> ChannelSample {
        let mean_aoa = stream.uniform_range(0.0, TAU);
        let mut aoas = Vec::with_capacity(self.n_paths);
        let mut gains = Vec::with_capacity(self.n_paths);
        for _ in 0..self.n_paths {
            aoas.push(stream.uniform_range(
                mean_aoa - self.angular_spread,
                mean_aoa + self.angular_spread,
            ));
            gains.push(stream.cn01());
        }
        ChannelSample::from_paths(gains, aoas, mean_aoa, &self.f)
    }
}

/// One-shot convenience wrapper around [`ChannelModel::sample`].
pub fn sample_channel(cfg: &SystemConfig, stream: &mut RngStream) -> Result<ChannelSample> {
    Ok(ChannelModel::new(cfg)?.sample(stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamDomain;

    #[test]
    fn single_broadside_path_gives_all_ones() {
        let f = dft_shift_matrix(8);
        let s = ChannelSample::from_paths(vec![C64::new(1.0, 0.0)], vec![0.0], 0.0, &f);
        for z in s.h.iter() {
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn mean_channel_energy_matches_antenna_count() {
        // E||h||^2 = N because E|alpha|^2 = 1 and ||a(theta)||^2 = N.
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = 64;
        cfg.n_rf_chains = 16;
        let model = ChannelModel::new(&cfg).unwrap();
        let trials = 10_000;
        let mut acc = 0.0;
        for i in 0..trials {
            let mut stream = RngStream::for_ordinal(9, StreamDomain::Channel, i);
            acc += model.sample(&mut stream).h.norm_sq();
        }
        let mean = acc / trials as f64;
        let n = cfg.n_antennas as f64;
        assert!(
            (mean - n).abs() / n < 0.03,
            "mean energy {mean} vs N={n}"
        );
    }

    #[test]
    fn angular_energy_concentrates_in_few_bins() {
        // Narrow spread (5 degrees) clusters the angular channel: on average
        // the 16 strongest of 128 bins carry more than 90% of the energy.
        let mut cfg = SystemConfig::paper();
        cfg.master_seed = 3;
        let model = ChannelModel::new(&cfg).unwrap();
        let trials = 500;
        let mut acc = 0.0;
        for i in 0..trials {
            let mut stream = RngStream::for_ordinal(cfg.master_seed, StreamDomain::Channel, i);
            let s = model.sample(&mut stream);
            let mut bins: Vec<f64> = s.x.iter().map(|z| z.norm_sqr()).collect();
            bins.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let top: f64 = bins.iter().take(16).sum();
            let total: f64 = bins.iter().sum();
            acc += top / total;
        }
        let mean_fraction = acc / trials as f64;
        assert!(
            mean_fraction > 0.9,
            "top-16 energy fraction {mean_fraction}"
        );
    }

    #[test]
    fn aoas_stay_within_spread() {
        let cfg = SystemConfig::desk();
        let model = ChannelModel::new(&cfg).unwrap();
        for i in 0..1000 {
            let mut stream = RngStream::for_ordinal(4, StreamDomain::Channel, i);
            let s = model.sample(&mut stream);
            for &theta in &s.aoas {
                assert!((theta - s.mean_aoa).abs() <= cfg.angular_spread + 1e-12);
            }
        }
    }

    #[test]
    fn angular_transform_preserves_norm() {
        let cfg = SystemConfig::desk();
        let model = ChannelModel::new(&cfg).unwrap();
        let mut stream = RngStream::for_ordinal(5, StreamDomain::Channel, 0);
        for _ in 0..50 {
            let s = model.sample(&mut stream);
            assert!((s.x.norm() - s.h.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn from_parts_rejects_inconsistent_fields() {
        let f = dft_shift_matrix(8);
        let s = ChannelSample::from_paths(
            vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)],
            vec![0.1, 0.2],
            0.15,
            &f,
        );
        let mut bad_h = s.h.clone();
        bad_h[0] += C64::new(0.1, 0.0);
        assert!(ChannelSample::from_parts(
            s.gains.clone(),
            s.aoas.clone(),
            s.mean_aoa,
            bad_h,
            s.x.clone(),
            &f
        )
        .is_err());
    }
}
