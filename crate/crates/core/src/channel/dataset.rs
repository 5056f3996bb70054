//! Dataset file pair: a JSON manifest plus a flat binary record file.
//!
//! The binary file is a sequence of fixed-size records of little-endian
//! 64-bit floats. Per record, in order:
//!
//! ```text
//! mean_aoa                      1
//! aoas                          N_p
//! gains (re, im interleaved)    2 N_p
//! h     (re, im interleaved)    2 N
//! x     (re, im interleaved)    2 N
//! per SNR slot, the observation payload:
//!   full-array: LS estimate     2 N
//!   HAD:        received y      2 M
//! ```
//!
//! Records are keyed by a global sample ordinal (stored in the manifest as
//! `ordinal_offset` for split files), and every random draw derives from
//! `(master_seed, ordinal)`, so regeneration is bit-identical and
//! parallelizable.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{zadoff_chu_combiner, CVector, RngStream, StreamDomain, C64};

use super::{
    generate_pilots, observe_full, observe_had, ChannelModel, ChannelSample, ObsMode,
    Observation, ObservationPayload, SystemConfig,
};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: SystemConfig,
    pub mode: ObsMode,
    pub count: usize,
    /// Global ordinal of the first record (split files are windows into one
    /// ordinal space).
    pub ordinal_offset: u64,
    /// f64 words per record, for sanity-checking the binary file.
    pub record_len: usize,
}

/// An in-memory dataset: ground-truth channels plus one observation per
/// configured SNR point.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<ChannelSample>,
    /// `observations[i][s]` is record `i` observed at SNR slot `s`.
    pub observations: Vec<Vec<Observation>>,
}

fn record_len(cfg: &SystemConfig, mode: ObsMode) -> usize {
    let n = cfg.n_antennas;
    let payload = match mode {
        ObsMode::FullArray => 2 * n,
        ObsMode::Had => 2 * cfg.n_rf_chains,
    };
    1 + cfg.n_paths + 2 * cfg.n_paths + 2 * n + 2 * n + cfg.snr_db.len() * payload
}

impl Dataset {
    /// Generates `count` records starting at `ordinal_offset`. Each record is
    /// an independent single-user uplink (multi-user blocks separate exactly
    /// under orthogonal pilots, so per-user records lose nothing).
    pub fn generate(
        cfg: &SystemConfig,
        mode: ObsMode,
        count: usize,
        ordinal_offset: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let model = ChannelModel::new(cfg)?;
        let pilots = generate_pilots(1, cfg.pilot_len)?;
        let combiner = match mode {
            ObsMode::Had => Some(zadoff_chu_combiner(cfg.n_rf_chains, cfg.n_antennas)?),
            ObsMode::FullArray => None,
        };
        let seed = cfg.master_seed;

        let records: Result<Vec<(ChannelSample, Vec<Observation>)>> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let ordinal = ordinal_offset + i;
                let mut cs = RngStream::for_ordinal(seed, StreamDomain::Channel, ordinal);
                let sample = model.sample(&mut cs);
                let mut per_snr = Vec::with_capacity(cfg.snr_db.len());
                for (slot, &snr_db) in cfg.snr_db.iter().enumerate() {
                    let noise_var = SystemConfig::noise_var(snr_db);
                    let mut ns =
                        RngStream::for_slot(seed, StreamDomain::Noise, slot as u16, ordinal);
                    let obs = match &combiner {
                        None => observe_full(
                            std::slice::from_ref(&sample),
                            &pilots,
                            noise_var,
                            snr_db,
                            &mut ns,
                        )?,
                        Some(w) => observe_had(
                            std::slice::from_ref(&sample),
                            &pilots,
                            w,
                            noise_var,
                            snr_db,
                            &mut ns,
                        )?,
                    };
                    per_snr.push(obs.into_iter().next().unwrap());
                }
                Ok((sample, per_snr))
            })
            .collect();
        let records = records?;

        let (samples, observations): (Vec<_>, Vec<_>) = records.into_iter().unzip();
        Ok(Self {
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                config: cfg.clone(),
                mode,
                count,
                ordinal_offset,
                record_len: record_len(cfg, mode),
            },
            samples,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn snr_points(&self) -> &[f64] {
        &self.manifest.config.snr_db
    }

    /// Index of an SNR point in the schedule.
    pub fn snr_slot(&self, snr_db: f64) -> Option<usize> {
        self.snr_points()
            .iter()
            .position(|s| (s - snr_db).abs() < 1e-9)
    }

    pub fn manifest_path(stem: &Path) -> PathBuf {
        stem.with_extension("json")
    }

    pub fn records_path(stem: &Path) -> PathBuf {
        stem.with_extension("bin")
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(Self::manifest_path(stem), json)?;

        let mut buf: Vec<u8> = Vec::with_capacity(self.len() * self.manifest.record_len * 8);
        for (sample, per_snr) in self.samples.iter().zip(self.observations.iter()) {
            push_f64(&mut buf, sample.mean_aoa);
            for &theta in &sample.aoas {
                push_f64(&mut buf, theta);
            }
            for g in &sample.gains {
                push_c64(&mut buf, *g);
            }
            push_cvec(&mut buf, &sample.h);
            push_cvec(&mut buf, &sample.x);
            for obs in per_snr {
                push_cvec(&mut buf, obs.payload_vec());
            }
        }
        let mut file = std::fs::File::create(Self::records_path(stem))?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Loads a file pair, re-verifying each record's internal consistency
    /// (`h` against its path parameters, `x` against `F h`).
    pub fn load(stem: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(Self::manifest_path(stem))?;
        let manifest: DatasetManifest = serde_json::from_str(&json)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                manifest.format_version
            )));
        }
        let cfg = &manifest.config;
        cfg.validate()?;
        let expected_len = record_len(cfg, manifest.mode);
        if expected_len != manifest.record_len {
            return Err(Error::Format("manifest record_len mismatch".into()));
        }

        let mut raw = Vec::new();
        std::fs::File::open(Self::records_path(stem))?.read_to_end(&mut raw)?;
        let want_bytes = manifest.count * expected_len * 8;
        if raw.len() != want_bytes {
            return Err(Error::Format(format!(
                "record file is {} bytes, expected {}",
                raw.len(),
                want_bytes
            )));
        }

        let model = ChannelModel::new(cfg)?;
        let n = cfg.n_antennas;
        let payload_len = match manifest.mode {
            ObsMode::FullArray => n,
            ObsMode::Had => cfg.n_rf_chains,
        };

        let mut samples = Vec::with_capacity(manifest.count);
        let mut observations = Vec::with_capacity(manifest.count);
        let mut cursor = Cursor::new(&raw);
        for _ in 0..manifest.count {
            let mean_aoa = cursor.f64();
            let aoas: Vec<f64> = (0..cfg.n_paths).map(|_| cursor.f64()).collect();
            let gains: Vec<C64> = (0..cfg.n_paths).map(|_| cursor.c64()).collect();
            let h = cursor.cvec(n);
            let x = cursor.cvec(n);
            let sample =
                ChannelSample::from_parts(gains, aoas, mean_aoa, h, x, model.transform())?;
            let mut per_snr = Vec::with_capacity(cfg.snr_db.len());
            for &snr_db in &cfg.snr_db {
                let v = cursor.cvec(payload_len);
                let payload = match manifest.mode {
                    ObsMode::FullArray => ObservationPayload::FullArrayLs(v),
                    ObsMode::Had => ObservationPayload::Had(v),
                };
                per_snr.push(Observation {
                    payload,
                    noise_var: SystemConfig::noise_var(snr_db),
                    snr_db,
                });
            }
            samples.push(sample);
            observations.push(per_snr);
        }

        Ok(Self {
            manifest,
            samples,
            observations,
        })
    }
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_c64(buf: &mut Vec<u8>, z: C64) {
    push_f64(buf, z.re);
    push_f64(buf, z.im);
}

fn push_cvec(buf: &mut Vec<u8>, v: &CVector) {
    for z in v.iter() {
        push_c64(buf, *z);
    }
}

struct Cursor<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(raw: &'a [u8]) -> Self {
        Self { raw, pos: 0 }
    }

    fn f64(&mut self) -> f64 {
        let bytes: [u8; 8] = self.raw[self.pos..self.pos + 8].try_into().unwrap();
        self.pos += 8;
        f64::from_le_bytes(bytes)
    }

    fn c64(&mut self) -> C64 {
        let re = self.f64();
        let im = self.f64();
        C64::new(re, im)
    }

    fn cvec(&mut self, n: usize) -> CVector {
        CVector::new((0..n).map(|_| self.c64()).collect())
    }
}
