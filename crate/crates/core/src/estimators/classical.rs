//! Classical estimators: LS passthrough, MMSE refinement with a single or
//! per-angular-region correlation matrix, and separate LS under HAD.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, ObservationPayload};
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_ok, dft_shift_matrix, hermitian_solve, CMatrix, CVector, RngStream, StreamDomain,
    C64,
};

use super::{Estimate, EstimateInput, Estimator};

// ---------------------------------------------------------------------------
// LS
// ---------------------------------------------------------------------------

/// Passes the full-array LS coarse estimate through unchanged.
pub struct LsEstimator {
    f: CMatrix,
}

impl LsEstimator {
    pub fn new(n_antennas: usize) -> Self {
        Self {
            f: dft_shift_matrix(n_antennas),
        }
    }
}

impl Estimator for LsEstimator {
    fn name(&self) -> String {
        "ls".into()
    }

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
        match &input.obs.payload {
            ObservationPayload::FullArrayLs(h_ls) => Ok(Estimate {
                x_hat: self.f.matvec(h_ls),
                h_hat: h_ls.clone(),
            }),
            ObservationPayload::Had(_) => Err(Error::Config(
                "ls estimator needs a full-array observation".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// CCM estimation and the regional bank
// ---------------------------------------------------------------------------

/// Sample-average channel correlation matrix `R = mean(h h^H)`, Hermitian
/// symmetrized. Callers should provide at least N samples; fewer still
/// produces an estimate but it will be rank-deficient.
pub fn estimate_ccm<'a>(samples: impl IntoIterator<Item = &'a ChannelSample>) -> Result<CMatrix> {
    let mut iter = samples.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Config("estimate_ccm: empty sample set".into()))?;
    let n = first.n_antennas();
    let mut r = CMatrix::zeros(n, n);
    r.add_outer_self(&first.h, 1.0);
    let mut count = 1usize;
    for s in iter {
        if s.n_antennas() != n {
            return Err(Error::Dim("estimate_ccm: mixed antenna counts".into()));
        }
        r.add_outer_self(&s.h, 1.0);
        count += 1;
    }
    r.scale_in_place(1.0 / count as f64);
    r.symmetrize();
    Ok(r)
}

pub const CCM_BANK_FORMAT_VERSION: u32 = 1;

/// One CCM per canonical mean-AoA region. A width of 360 degrees degenerates
/// to a single global CCM. With sine sharing, the two regions whose mean AoAs
/// have the same sine share one CCM (the steering vector depends on the AoA
/// only through its sine, so the pooled channels are identically distributed).
#[derive(Debug, Clone)]
pub struct CcmBank {
    pub n_antennas: usize,
    pub region_width_deg: f64,
    pub sine_sharing: bool,
    /// Canonical region index -> CCM.
    pub ccms: BTreeMap<usize, CMatrix>,
    /// Canonical regions fitted from fewer than N samples.
    pub underfilled: Vec<usize>,
}

impl CcmBank {
    /// Total number of regions the angular space splits into.
    pub fn region_count(width_deg: f64) -> usize {
        (360.0 / width_deg).round() as usize
    }

    /// Region index of a mean AoA.
    pub fn region_of(mean_aoa: f64, width_deg: f64) -> usize {
        let total = Self::region_count(width_deg);
        let norm = mean_aoa.rem_euclid(TAU);
        (((norm / TAU) * total as f64).floor() as usize).min(total - 1)
    }

    /// Canonical (shared) region index: regions reflected through
    /// `theta -> pi - theta` have identical sine, hence identical channel
    /// statistics, and collapse onto the smaller index.
    pub fn canonical_region(region: usize, width_deg: f64, sine_sharing: bool) -> Result<usize> {
        if !sine_sharing {
            return Ok(region);
        }
        let total = Self::region_count(width_deg);
        if total % 2 != 0 || !(180.0 / width_deg).fract().abs().lt(&1e-9) {
            return Err(Error::Config(format!(
                "sine sharing needs a region width dividing 180 degrees, got {width_deg}"
            )));
        }
        let half = total / 2;
        let partner = if region < half {
            half - 1 - region
        } else {
            total + half - 1 - region
        };
        Ok(region.min(partner))
    }

    /// Number of distinct CCMs for a width (after sharing, if enabled).
    pub fn distinct_region_count(width_deg: f64, sine_sharing: bool) -> usize {
        let total = Self::region_count(width_deg);
        if sine_sharing {
            total / 2
        } else {
            total
        }
    }

    /// Fits one CCM per (canonical) region over the provided samples.
    pub fn fit(
        samples: &[ChannelSample],
        region_width_deg: f64,
        sine_sharing: bool,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("ccm bank: empty sample set".into()));
        }
        let n = samples[0].n_antennas();
        let mut buckets: BTreeMap<usize, Vec<&ChannelSample>> = BTreeMap::new();
        for s in samples {
            let region = Self::region_of(s.mean_aoa, region_width_deg);
            let canon = Self::canonical_region(region, region_width_deg, sine_sharing)?;
            buckets.entry(canon).or_default().push(s);
        }
        let mut ccms = BTreeMap::new();
        let mut underfilled = Vec::new();
        for (region, bucket) in buckets {
            if bucket.len() < n {
                underfilled.push(region);
            }
            ccms.insert(region, estimate_ccm(bucket)?);
        }
        if !underfilled.is_empty() {
            eprintln!(
                "warning: {} CCM region(s) fitted from fewer than N={n} samples",
                underfilled.len()
            );
        }
        Ok(Self {
            n_antennas: n,
            region_width_deg,
            sine_sharing,
            ccms,
            underfilled,
        })
    }

    /// Fits a single global CCM (region width 360 degrees).
    pub fn fit_single(samples: &[ChannelSample]) -> Result<Self> {
        Self::fit(samples, 360.0, false)
    }

    pub fn single(&self) -> Result<&CMatrix> {
        if self.ccms.len() != 1 {
            return Err(Error::Config("ccm bank holds more than one region".into()));
        }
        Ok(self.ccms.values().next().unwrap())
    }

    pub fn lookup(&self, mean_aoa: f64) -> Result<(usize, &CMatrix)> {
        let region = Self::region_of(mean_aoa, self.region_width_deg);
        let canon = Self::canonical_region(region, self.region_width_deg, self.sine_sharing)?;
        let ccm = self.ccms.get(&canon).ok_or_else(|| {
            Error::Config(format!("ccm bank: region {canon} not covered"))
        })?;
        Ok((canon, ccm))
    }

    /// Validates the bank invariants: Hermitian within 1e-10 and positive
    /// semidefinite (after a tiny diagonal shift absorbing estimation noise).
    pub fn validate(&self) -> Result<()> {
        for (region, r) in &self.ccms {
            if r.hermitian_deviation() > 1e-10 * r.max_abs().max(1.0) {
                return Err(Error::Numerics(format!(
                    "ccm bank: region {region} is not Hermitian"
                )));
            }
            let mut shifted = r.clone();
            let shift = 1e-8 * (r.trace().re / r.rows() as f64).max(1.0);
            shifted.add_diag(shift);
            if !cholesky_ok(&shifted) {
                return Err(Error::Numerics(format!(
                    "ccm bank: region {region} is not positive semidefinite"
                )));
            }
        }
        Ok(())
    }

    /// Writes the bank: one JSON header line, then per region (in header
    /// order) the row-major complex matrix as little-endian f64 pairs.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let header = CcmBankHeader {
            format_version: CCM_BANK_FORMAT_VERSION,
            n_antennas: self.n_antennas,
            region_width_deg: self.region_width_deg,
            sine_sharing: self.sine_sharing,
            regions: self.ccms.keys().copied().collect(),
        };
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        let mut bytes = Vec::new();
        for r in self.ccms.values() {
            for z in r.as_slice() {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: CcmBankHeader = serde_json::from_str(line.trim_end())?;
        if header.format_version != CCM_BANK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported ccm bank version {}",
                header.format_version
            )));
        }
        let n = header.n_antennas;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let per_region = n * n * 16;
        if bytes.len() != per_region * header.regions.len() {
            return Err(Error::Format("ccm bank: blob length mismatch".into()));
        }
        let mut ccms = BTreeMap::new();
        for (i, region) in header.regions.iter().enumerate() {
            let chunk = &bytes[i * per_region..(i + 1) * per_region];
            let mut m = CMatrix::zeros(n, n);
            for (j, pair) in chunk.chunks_exact(16).enumerate() {
                let re = f64::from_le_bytes(pair[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(pair[8..16].try_into().unwrap());
                m.as_mut_slice()[j] = C64::new(re, im);
            }
            ccms.insert(*region, m);
        }
        let bank = Self {
            n_antennas: n,
            region_width_deg: header.region_width_deg,
            sine_sharing: header.sine_sharing,
            ccms,
            underfilled: Vec::new(),
        };
        bank.validate()?;
        Ok(bank)
    }
}

#[derive(Serialize, Deserialize)]
struct CcmBankHeader {
    format_version: u32,
    n_antennas: usize,
    region_width_deg: f64,
    sine_sharing: bool,
    regions: Vec<usize>,
}

// ---------------------------------------------------------------------------
// MMSE
// ---------------------------------------------------------------------------

/// MMSE filter `R (R + I/SNR)^{-1}` for one CCM at one noise level. The
/// system matrix is Hermitian positive definite by construction, and the
/// product is Hermitian because `R` and the inverse commute.
fn mmse_filter(r: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    let mut a = r.clone();
    a.add_diag(noise_var);
    // (R + s I)^{-1} R  ==  R (R + s I)^{-1}
    hermitian_solve(&a, r)
}

fn filter_key(noise_var: f64) -> u64 {
    noise_var.to_bits()
}

/// MMSE refinement with one global CCM.
pub struct MmseSingle {
    f: CMatrix,
    filters: BTreeMap<u64, CMatrix>,
}

impl MmseSingle {
    /// Precomputes filters for every SNR point the estimator will see.
    pub fn new(ccm: &CMatrix, noise_vars: &[f64]) -> Result<Self> {
        let n = ccm.rows();
        let mut filters = BTreeMap::new();
        for &nv in noise_vars {
            filters.insert(filter_key(nv), mmse_filter(ccm, nv)?);
        }
        Ok(Self {
            f: dft_shift_matrix(n),
            filters,
        })
    }

    fn filter_for(&self, noise_var: f64) -> Result<&CMatrix> {
        self.filters.get(&filter_key(noise_var)).ok_or_else(|| {
            Error::Config(format!(
                "mmse: no filter precomputed for noise variance {noise_var}"
            ))
        })
    }
}

impl Estimator for MmseSingle {
    fn name(&self) -> String {
        "mmse-single".into()
    }

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
        let h_ls = match &input.obs.payload {
            ObservationPayload::FullArrayLs(v) => v,
            ObservationPayload::Had(_) => {
                return Err(Error::Config(
                    "mmse estimator needs a full-array observation".into(),
                ))
            }
        };
        let h_hat = self.filter_for(input.obs.noise_var)?.matvec(h_ls);
        Ok(Estimate {
            x_hat: self.f.matvec(&h_hat),
            h_hat,
        })
    }
}

/// MMSE refinement with a bank of per-region CCMs, selected by the sample's
/// ground-truth mean AoA (the region estimate is assumed accurate).
pub struct MmseRegional {
    bank_meta: (f64, bool),
    f: CMatrix,
    /// (canonical region, noise-variance bits) -> filter.
    filters: BTreeMap<(usize, u64), CMatrix>,
}

impl MmseRegional {
    pub fn new(bank: &CcmBank, noise_vars: &[f64]) -> Result<Self> {
        bank.validate()?;
        let mut filters = BTreeMap::new();
        for (&region, r) in &bank.ccms {
            for &nv in noise_vars {
                filters.insert((region, filter_key(nv)), mmse_filter(r, nv)?);
            }
        }
        Ok(Self {
            bank_meta: (bank.region_width_deg, bank.sine_sharing),
            f: dft_shift_matrix(bank.n_antennas),
            filters,
        })
    }
}

impl Estimator for MmseRegional {
    fn name(&self) -> String {
        format!("mmse-regional-{}deg", self.bank_meta.0)
    }

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
        let h_ls = match &input.obs.payload {
            ObservationPayload::FullArrayLs(v) => v,
            ObservationPayload::Had(_) => {
                return Err(Error::Config(
                    "mmse estimator needs a full-array observation".into(),
                ))
            }
        };
        let (width, sharing) = self.bank_meta;
        let region = CcmBank::region_of(input.sample.mean_aoa, width);
        let canon = CcmBank::canonical_region(region, width, sharing)?;
        let filter = self
            .filters
            .get(&(canon, filter_key(input.obs.noise_var)))
            .ok_or_else(|| {
                Error::Config(format!(
                    "mmse-regional: region {canon} has no filter at this noise level"
                ))
            })?;
        let h_hat = filter.matvec(h_ls);
        Ok(Estimate {
            x_hat: self.f.matvec(&h_hat),
            h_hat,
        })
    }
}

// ---------------------------------------------------------------------------
// Separate LS
// ---------------------------------------------------------------------------

/// Separate LS acquisition under HAD: `ceil(N/M)` pilot rounds, each
/// switching on `M` antennas (the last round takes the remainder) and reading
/// their channels plus effective noise of the same per-antenna variance as a
/// full-array LS round.
pub fn separate_ls(
    channel: &ChannelSample,
    m_chains: usize,
    noise_var: f64,
    stream: &mut RngStream,
) -> Result<CVector> {
    let n = channel.n_antennas();
    if m_chains == 0 || m_chains > n {
        return Err(Error::Config(format!(
            "separate-ls: need 1 <= M <= N, got M={m_chains}, N={n}"
        )));
    }
    let sigma = noise_var.sqrt();
    let mut h_hat = CVector::zeros(n);
    let rounds = n.div_ceil(m_chains);
    for round in 0..rounds {
        let start = round * m_chains;
        let end = (start + m_chains).min(n);
        for idx in start..end {
            h_hat[idx] = channel.h[idx] + stream.cn01() * sigma;
        }
    }
    Ok(h_hat)
}

/// Number of pilot rounds separate LS spends for an (N, M) pair.
pub fn separate_ls_rounds(n_antennas: usize, m_chains: usize) -> usize {
    n_antennas.div_ceil(m_chains)
}

/// [`separate_ls`] behind the estimator interface. The observation payload is
/// ignored: this estimator runs its own acquisition, drawing noise from the
/// stream `(seed, Noise domain, record ordinal)`.
pub struct SeparateLsEstimator {
    pub m_chains: usize,
    pub seed: u64,
    f: CMatrix,
}

impl SeparateLsEstimator {
    pub fn new(n_antennas: usize, m_chains: usize, seed: u64) -> Self {
        Self {
            m_chains,
            seed,
            f: dft_shift_matrix(n_antennas),
        }
    }
}

impl Estimator for SeparateLsEstimator {
    fn name(&self) -> String {
        "separate-ls".into()
    }

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
        let mut stream = RngStream::for_slot(
            self.seed,
            StreamDomain::Noise,
            u16::MAX, // separate acquisition namespace, clear of dataset slots
            input.ordinal,
        );
        let h_hat = separate_ls(
            input.sample,
            self.m_chains,
            input.obs.noise_var,
            &mut stream,
        )?;
        Ok(Estimate {
            x_hat: self.f.matvec(&h_hat),
            h_hat,
        })
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
