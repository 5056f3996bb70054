//! Uplink pilot transmission and the per-user observations the estimators
//! consume: coarse LS estimates with the full array, compressed received
//! vectors under hybrid analog-digital combining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, RngStream, C64};

use super::ChannelSample;

/// Observation mode: which acquisition front-end produced the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsMode {
    /// Every antenna has its own RF chain; the payload is the length-N LS
    /// coarse estimate.
    FullArray,
    /// M RF chains behind a phase-shifter combiner; the payload is the
    /// length-M compressed received vector.
    Had,
}

#[derive(Debug, Clone)]
pub enum ObservationPayload {
    /// LS coarse estimate `h + n_eff`, length N.
    FullArrayLs(CVector),
    /// Compressed received vector `W h + W n_eff`, length M.
    Had(CVector),
}

/// One user's observation at one SNR point.
#[derive(Debug, Clone)]
pub struct Observation {
    pub payload: ObservationPayload,
    /// Noise variance at the antennas (unit pilot power).
    pub noise_var: f64,
    /// The SNR point this observation was generated at, in dB.
    pub snr_db: f64,
}

impl Observation {
    pub fn mode(&self) -> ObsMode {
        match self.payload {
            ObservationPayload::FullArrayLs(_) => ObsMode::FullArray,
            ObservationPayload::Had(_) => ObsMode::Had,
        }
    }

    pub fn payload_vec(&self) -> &CVector {
        match &self.payload {
            ObservationPayload::FullArrayLs(v) => v,
            ObservationPayload::Had(v) => v,
        }
    }
}

/// Orthonormal pilot matrix: row `k` is user `k`'s pilot, drawn from the
/// rows of a unitary DFT of size `L_p`, so `p_i p_j^H = delta_ij` exactly.
pub fn generate_pilots(n_users: usize, pilot_len: usize) -> Result<CMatrix> {
    if pilot_len < n_users {
        return Err(Error::Config(format!(
            "pilot length {pilot_len} shorter than user count {n_users}"
        )));
    }
    let lf = pilot_len as f64;
    let scale = 1.0 / lf.sqrt();
    Ok(CMatrix::from_fn(n_users, pilot_len, |k, l| {
        C64::from_polar(
            scale,
            -std::f64::consts::TAU * (k as f64) * (l as f64) / lf,
        )
    }))
}

fn check_pilots(pilots: &CMatrix) -> Result<()> {
    let k = pilots.rows();
    let dev = pilots.gram().max_abs_diff(&CMatrix::identity(k));
    if dev > 1e-10 {
        return Err(Error::Config(format!(
            "pilot rows are not orthonormal (deviation {dev:.3e})"
        )));
    }
    Ok(())
}

/// Simulates one pilot block with the full array and separates users by
/// pilot correlation: `Y = sum_k h_k p_k + N`, then per user
/// `h_ls = Y p_k^H = h_k + n_eff` with `n_eff ~ CN(0, noise_var I)`.
pub fn observe_full(
    samples: &[ChannelSample],
    pilots: &CMatrix,
    noise_var: f64,
    snr_db: f64,
    stream: &mut RngStream,
) -> Result<Vec<Observation>> {
    check_pilots(pilots)?;
    let k_users = samples.len();
    if k_users == 0 || k_users > pilots.rows() {
        return Err(Error::Dim(format!(
            "observe_full: {k_users} samples for {} pilots",
            pilots.rows()
        )));
    }
    let n = samples[0].n_antennas();
    let l_p = pilots.cols();

    // Y = sum_k h_k p_k + N
    let mut y = CMatrix::zeros(n, l_p);
    for (k, s) in samples.iter().enumerate() {
        if s.n_antennas() != n {
            return Err(Error::Dim("observe_full: mixed antenna counts".into()));
        }
        let p = pilots.row(k);
        for r in 0..n {
            let h = s.h[r];
            let dst = y.row_mut(r);
            for (d, pl) in dst.iter_mut().zip(p.iter()) {
                *d += h * pl;
            }
        }
    }
    let sigma = noise_var.sqrt();
    for z in y.as_mut_slice() {
        *z += stream.cn01() * sigma;
    }

    // Per-user LS separation.
    Ok((0..k_users)
        .map(|k| {
            let p = pilots.row(k);
            let mut h_ls = CVector::zeros(n);
            for r in 0..n {
                let row = y.row(r);
                let mut acc = C64::new(0.0, 0.0);
                for (yv, pl) in row.iter().zip(p.iter()) {
                    acc += yv * pl.conj();
                }
                h_ls[r] = acc;
            }
            Observation {
                payload: ObservationPayload::FullArrayLs(h_ls),
                noise_var,
                snr_db,
            }
        })
        .collect())
}

/// Simulates the same pilot block received through the analog combiner `W`
/// (M x N): per user `y = W h_k + W n_eff`, length M.
pub fn observe_had(
    samples: &[ChannelSample],
    pilots: &CMatrix,
    w: &CMatrix,
    noise_var: f64,
    snr_db: f64,
    stream: &mut RngStream,
) -> Result<Vec<Observation>> {
    if samples.is_empty() {
        return Err(Error::Dim("observe_had: no samples".into()));
    }
    let n = samples[0].n_antennas();
    if w.cols() != n {
        return Err(Error::Dim(format!(
            "observe_had: combiner has {} columns, expected {}",
            w.cols(),
            n
        )));
    }
    // Y_had = W Y, and separation commutes with the combiner, so compressing
    // the per-user LS vector is equivalent to separating W Y.
    let full = observe_full(samples, pilots, noise_var, snr_db, stream)?;
    Ok(full
        .into_iter()
        .map(|obs| {
            let h_ls = match obs.payload {
                ObservationPayload::FullArrayLs(v) => v,
                ObservationPayload::Had(_) => unreachable!(),
            };
            Observation {
                payload: ObservationPayload::Had(w.matvec(&h_ls)),
                noise_var,
                snr_db,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, SystemConfig};
    use crate::numerics::{zadoff_chu_combiner, StreamDomain};

    fn model(n: usize) -> (SystemConfig, ChannelModel) {
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = n;
        cfg.n_rf_chains = n.min(16);
        let model = ChannelModel::new(&cfg).unwrap();
        (cfg, model)
    }

    #[test]
    fn pilot_rows_are_orthonormal() {
        for &(k, l) in &[(1usize, 1usize), (2, 2), (10, 10), (4, 16)] {
            let p = generate_pilots(k, l).unwrap();
            let dev = p.gram().max_abs_diff(&CMatrix::identity(k));
            assert!(dev < 1e-14, "K={k} Lp={l} dev={dev:.3e}");
        }
    }

    #[test]
    fn pilot_length_must_cover_users() {
        assert!(generate_pilots(3, 2).is_err());
    }

    #[test]
    fn noiseless_full_observation_recovers_channels_exactly() {
        let (_, model) = model(16);
        let mut cs = RngStream::for_ordinal(1, StreamDomain::Channel, 0);
        let samples: Vec<_> = (0..3).map(|_| model.sample(&mut cs)).collect();
        let pilots = generate_pilots(3, 8).unwrap();
        let mut ns = RngStream::for_ordinal(1, StreamDomain::Noise, 0);
        let obs = observe_full(&samples, &pilots, 0.0, f64::INFINITY, &mut ns).unwrap();
        for (o, s) in obs.iter().zip(samples.iter()) {
            let err = o.payload_vec().sub(&s.h).norm();
            assert!(err < 1e-12, "residual {err:.3e}");
        }
    }

    #[test]
    fn orthogonality_kills_cross_talk() {
        let (_, model) = model(16);
        let mut cs = RngStream::for_ordinal(2, StreamDomain::Channel, 0);
        let strong = model.sample(&mut cs);
        let zero = ChannelSample {
            gains: vec![C64::new(0.0, 0.0); strong.gains.len()],
            aoas: strong.aoas.clone(),
            mean_aoa: strong.mean_aoa,
            h: CVector::zeros(16),
            x: CVector::zeros(16),
        };
        let pilots = generate_pilots(2, 4).unwrap();
        let mut ns = RngStream::for_ordinal(2, StreamDomain::Noise, 0);
        let obs = observe_full(&[zero, strong], &pilots, 0.0, f64::INFINITY, &mut ns).unwrap();
        assert!(obs[0].payload_vec().norm() < 1e-12);
    }

    #[test]
    fn ls_noise_variance_matches_sigma() {
        // ||p||=1 preserves the per-entry noise variance, so over many trials
        // E||h_ls - h||^2 = N * noise_var.
        let (_, model) = model(32);
        let noise_var = 0.1;
        let trials = 10_000;
        let pilots = generate_pilots(1, 4).unwrap();
        let mut acc = 0.0;
        for i in 0..trials {
            let mut cs = RngStream::for_ordinal(3, StreamDomain::Channel, i);
            let s = model.sample(&mut cs);
            let mut ns = RngStream::for_slot(3, StreamDomain::Noise, 0, i);
            let obs = observe_full(&[s.clone()], &pilots, noise_var, 10.0, &mut ns).unwrap();
            acc += obs[0].payload_vec().sub(&s.h).norm_sq();
        }
        let mean = acc / trials as f64;
        let want = 32.0 * noise_var;
        assert!(
            (mean - want).abs() / want < 0.03,
            "mean {mean} want {want}"
        );
    }

    #[test]
    fn noiseless_had_is_exact_compression() {
        let (cfg, model) = model(32);
        let mut cs = RngStream::for_ordinal(4, StreamDomain::Channel, 0);
        let s = model.sample(&mut cs);
        let w = zadoff_chu_combiner(cfg.n_rf_chains, cfg.n_antennas).unwrap();
        let pilots = generate_pilots(1, 4).unwrap();
        let mut ns = RngStream::for_ordinal(4, StreamDomain::Noise, 0);
        let obs = observe_had(&[s.clone()], &pilots, &w, 0.0, f64::INFINITY, &mut ns).unwrap();
        let want = w.matvec(&s.h);
        assert!(obs[0].payload_vec().sub(&want).norm() < 1e-12);
    }

    #[test]
    fn identity_combiner_reduces_to_full_observation() {
        let (_, model) = model(16);
        let mut cs = RngStream::for_ordinal(5, StreamDomain::Channel, 0);
        let s = model.sample(&mut cs);
        let pilots = generate_pilots(1, 4).unwrap();
        let w = CMatrix::identity(16);
        let noise_var = 0.05;

        let mut ns = RngStream::for_ordinal(5, StreamDomain::Noise, 0);
        let had = observe_had(&[s.clone()], &pilots, &w, noise_var, 13.0, &mut ns).unwrap();
        let mut ns = RngStream::for_ordinal(5, StreamDomain::Noise, 0);
        let full = observe_full(&[s], &pilots, noise_var, 13.0, &mut ns).unwrap();

        let err = had[0].payload_vec().sub(full[0].payload_vec()).norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn had_noise_covariance_matches_model() {
        // Effective noise is W n_eff with covariance noise_var * W W^H.
        let n = 16;
        let m = 4;
        let w = zadoff_chu_combiner(m, n).unwrap();
        let pilots = generate_pilots(1, 2).unwrap();
        let noise_var = 0.2;
        let zero = ChannelSample {
            gains: vec![C64::new(0.0, 0.0)],
            aoas: vec![0.0],
            mean_aoa: 0.0,
            h: CVector::zeros(n),
            x: CVector::zeros(n),
        };
        let trials = 10_000;
        let mut cov = CMatrix::zeros(m, m);
        for i in 0..trials {
            let mut ns = RngStream::for_slot(6, StreamDomain::Noise, 0, i);
            let obs =
                observe_had(&[zero.clone()], &pilots, &w, noise_var, 7.0, &mut ns).unwrap();
            cov.add_outer_self(obs[0].payload_vec(), 1.0 / trials as f64);
        }
        let mut want = w.gram();
        want.scale_in_place(noise_var);
        let dev = cov.max_abs_diff(&want);
        assert!(dev < 0.05 * noise_var, "covariance deviation {dev:.3e}");
    }

    #[test]
    fn had_rejects_mismatched_combiner() {
        let (_, model) = model(16);
        let mut cs = RngStream::for_ordinal(7, StreamDomain::Channel, 0);
        let s = model.sample(&mut cs);
        let w = zadoff_chu_combiner(4, 32).unwrap();
        let pilots = generate_pilots(1, 4).unwrap();
        let mut ns = RngStream::for_ordinal(7, StreamDomain::Noise, 0);
        assert!(observe_had(&[s], &pilots, &w, 0.0, 0.0, &mut ns).is_err());
    }
}
