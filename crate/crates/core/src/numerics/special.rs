//! Special matrices of the uplink model: ULA steering vectors, the shifted
//! DFT that maps antenna-domain channels to the angular domain, and the
//! Zadoff-Chu analog combiner used under hybrid analog-digital reception.

use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::{CMatrix, CVector, C64};

/// Steering vector of a half-wavelength ULA: entry `n` is
/// `exp(j*pi*sin(theta)*n)` for `n = 0..N-1`.
pub fn steering_vector(theta: f64, n_antennas: usize) -> CVector {
    assert!(n_antennas >= 1);
    let s = theta.sin();
    CVector::new(
        (0..n_antennas)
            .map(|n| C64::from_polar(1.0, PI * s * n as f64))
            .collect(),
    )
}

/// Shifted-DFT matrix `F`: row `n` is
/// `(1/sqrt(N)) [1, e^{-j*pi*eta_n}, ..., e^{-j*pi*eta_n*(N-1)}]` over the
/// grid `eta_n in {(-N+1)/N, (-N+3)/N, ..., (N-1)/N}`. Unitary for every `N`;
/// `x = F h` is the angular-domain channel.
pub fn dft_shift_matrix(n: usize) -> CMatrix {
    assert!(n >= 1);
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |row, col| {
        let eta = (2.0 * row as f64 - (n as f64 - 1.0)) / n as f64;
        C64::from_polar(scale, -PI * eta * col as f64)
    })
}

/// Grid of spatial frequencies `eta_n` used by [`dft_shift_matrix`].
pub fn dft_shift_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|row| (2.0 * row as f64 - (n as f64 - 1.0)) / n as f64)
        .collect()
}

/// Analog combining matrix whose rows are cyclic shifts of a length-`N`
/// Zadoff-Chu sequence, scaled by `1/sqrt(N)` so every entry has modulus
/// `1/sqrt(N)` (a phase-shifter network cannot change amplitudes).
///
/// Row `m` shifts the base sequence by `m * floor(N/M)`. The root and the
/// shift step are not canonical; `zadoff_chu_combiner_with_root` exposes the
/// root for callers that want a different one (it must be coprime with `N`).
pub fn zadoff_chu_combiner(m_chains: usize, n_antennas: usize) -> Result<CMatrix> {
    zadoff_chu_combiner_with_root(m_chains, n_antennas, 1)
}

pub fn zadoff_chu_combiner_with_root(
    m_chains: usize,
    n_antennas: usize,
    root: u64,
) -> Result<CMatrix> {
    if m_chains < 1 || m_chains > n_antennas {
        return Err(Error::Config(format!(
            "combiner needs 1 <= M <= N, got M={m_chains}, N={n_antennas}"
        )));
    }
    if gcd(root, n_antennas as u64) != 1 {
        return Err(Error::Config(format!(
            "Zadoff-Chu root {root} is not coprime with N={n_antennas}"
        )));
    }
    let n = n_antennas;
    let nf = n as f64;
    let base: Vec<C64> = (0..n)
        .map(|k| {
            let kf = k as f64;
            // Even lengths use n^2, odd lengths n(n+1); both are CAZAC.
            let quad = if n % 2 == 0 { kf * kf } else { kf * (kf + 1.0) };
            C64::from_polar(1.0, -PI * root as f64 * quad / nf)
        })
        .collect();
    let step = n / m_chains;
    let scale = 1.0 / nf.sqrt();
    Ok(CMatrix::from_fn(m_chains, n, |row, col| {
        base[(col + row * step) % n] * scale
    }))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
