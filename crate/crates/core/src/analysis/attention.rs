//! Attention-map extraction and mean-AoA-bucketed statistics.
//!
//! The channel distribution depends on the mean AoA through its sine, so maps
//! are bucketed by `sin(mean AoA)`. Per bucket and attention layer the
//! analysis reports the average map, the pairwise L2 distances between bucket
//! averages, and which layers have saturated to the constant-0.5 gate (those
//! can be removed at test time).

use serde::{Deserialize, Serialize};

use crate::channel::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{EstimateInput, NeuralEstimator};
use crate::nn::Tensor;

/// Half-open `sin(mean AoA)` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineBucket {
    pub lo: f64,
    pub hi: f64,
}

impl SineBucket {
    pub fn contains(&self, sine: f64) -> bool {
        sine >= self.lo && sine < self.hi
    }
}

/// Two adjacent narrow ranges plus one far-away range.
pub fn default_buckets() -> Vec<SineBucket> {
    vec![
        SineBucket { lo: 0.0, hi: 0.2 },
        SineBucket { lo: 0.2, hi: 0.4 },
        SineBucket { lo: -1.0, hi: -0.8 },
    ]
}

/// One captured attention map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionMapRecord {
    pub model_id: String,
    /// Ordinal among the model's attention modules, in network order.
    pub layer: usize,
    /// Record index within the analyzed dataset.
    pub sample: usize,
    pub map: Vec<f32>,
    pub mean_aoa_sine: f64,
    pub bucket: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketAverage {
    pub bucket: usize,
    pub layer: usize,
    pub count: usize,
    pub mean_map: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketDistance {
    pub layer: usize,
    pub bucket_a: usize,
    pub bucket_b: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionAnalysis {
    pub records: Vec<AttentionMapRecord>,
    pub bucket_averages: Vec<BucketAverage>,
    pub inter_bucket_distances: Vec<BucketDistance>,
    /// Attention layers whose map is 0.5 everywhere (max deviation < 1e-6)
    /// across the whole dataset.
    pub saturated_layers: Vec<usize>,
    pub empty_buckets: Vec<usize>,
}

/// Runs inference over the dataset at one SNR slot, capturing every attention
/// map. Read-only over the estimator; repeated runs produce identical output.
pub fn attention_analysis(
    est: &NeuralEstimator,
    ds: &Dataset,
    slot: usize,
    buckets: &[SineBucket],
) -> Result<AttentionAnalysis> {
    let n_attention = est.model.attention_layers().len();
    if n_attention == 0 {
        return Err(Error::Config(
            "attention analysis: model has no attention modules".into(),
        ));
    }
    if slot >= ds.snr_points().len() {
        return Err(Error::Config(format!("attention analysis: no SNR slot {slot}")));
    }
    let model_id = est.kind.tag();

    let mut records: Vec<AttentionMapRecord> = Vec::with_capacity(ds.len() * n_attention);
    let mut max_dev = vec![0.0_f64; n_attention];

    let inputs: Vec<EstimateInput> = ds
        .samples
        .iter()
        .zip(ds.observations.iter())
        .enumerate()
        .map(|(i, (sample, per_snr))| EstimateInput {
            obs: &per_snr[slot],
            sample,
            ordinal: i as u64,
        })
        .collect();

    for (chunk_start, chunk) in inputs.chunks(512).enumerate().map(|(k, c)| (k * 512, c)) {
        let rows: Vec<Vec<f64>> = chunk
            .iter()
            .map(|i| est.input_features(i))
            .collect::<Result<_>>()?;
        let width: usize = est.model.spec().input_shape.iter().product();
        let mut shape = vec![chunk.len()];
        shape.extend(est.model.spec().input_shape.clone());
        let mut data = Vec::with_capacity(chunk.len() * width);
        for row in &rows {
            data.extend(row.iter().map(|&v| v as f32));
        }
        let x = Tensor::<f32>::new(shape, data);
        let (_, captures) = est.model.infer_capture(&x)?;
        if captures.len() != n_attention {
            return Err(Error::Numerics(
                "attention analysis: capture count mismatch".into(),
            ));
        }
        for (layer, capture) in captures.iter().enumerate() {
            let channels = capture.maps.shape()[1];
            for (row_idx, map_row) in capture.maps.data().chunks_exact(channels).enumerate() {
                let sample_index = chunk_start + row_idx;
                let sine = ds.samples[sample_index].mean_aoa.sin();
                let bucket = buckets.iter().position(|b| b.contains(sine));
                for &v in map_row {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(Error::Numerics(format!(
                            "attention analysis: gate {v} outside (0,1)"
                        )));
                    }
                    max_dev[layer] = max_dev[layer].max((v as f64 - 0.5).abs());
                }
                records.push(AttentionMapRecord {
                    model_id: model_id.clone(),
                    layer,
                    sample: sample_index,
                    map: map_row.to_vec(),
                    mean_aoa_sine: sine,
                    bucket,
                });
            }
        }
    }

    // Per-(bucket, layer) averages.
    let mut bucket_averages = Vec::new();
    let mut empty_buckets = Vec::new();
    for (bi, _) in buckets.iter().enumerate() {
        let mut any = false;
        for layer in 0..n_attention {
            let member_maps: Vec<&AttentionMapRecord> = records
                .iter()
                .filter(|r| r.bucket == Some(bi) && r.layer == layer)
                .collect();
            if member_maps.is_empty() {
                continue;
            }
            any = true;
            let c = member_maps[0].map.len();
            let mut mean = vec![0.0_f64; c];
            for r in &member_maps {
                for (m, &v) in mean.iter_mut().zip(r.map.iter()) {
                    *m += v as f64;
                }
            }
            let inv = 1.0 / member_maps.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            bucket_averages.push(BucketAverage {
                bucket: bi,
                layer,
                count: member_maps.len(),
                mean_map: mean,
            });
        }
        if !any {
            empty_buckets.push(bi);
            eprintln!("warning: attention bucket {bi} is empty");
        }
    }

    // Pairwise distances between bucket averages, per layer.
    let mut inter_bucket_distances = Vec::new();
    for layer in 0..n_attention {
        let layer_avgs: Vec<&BucketAverage> = bucket_averages
            .iter()
            .filter(|a| a.layer == layer)
            .collect();
        for i in 0..layer_avgs.len() {
            for j in (i + 1)..layer_avgs.len() {
                let l2 = layer_avgs[i]
                    .mean_map
                    .iter()
                    .zip(layer_avgs[j].mean_map.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                inter_bucket_distances.push(BucketDistance {
                    layer,
                    bucket_a: layer_avgs[i].bucket,
                    bucket_b: layer_avgs[j].bucket,
                    l2,
                });
            }
        }
    }

    let saturated_layers = max_dev
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < 1e-6)
        .map(|(i, _)| i)
        .collect();

    Ok(AttentionAnalysis {
        records,
        bucket_averages,
        inter_bucket_distances,
        saturated_layers,
        empty_buckets,
    })
}
