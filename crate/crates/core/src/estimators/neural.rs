//! The neural estimators and their architecture builders.
//!
//! Without HAD, a chain of convolutional blocks (Conv1D, batch norm, ReLU,
//! optionally channel attention) refines the angular-domain LS estimate, with
//! a 2-filter output convolution producing re/im. With HAD, a fully connected
//! net maps the compressed received vector to the angular channel; the
//! attention variant reshapes the hidden feature vector into a matrix, applies
//! the same attention module, and flattens back. The HAD convolutional
//! variants swap the output convolution for a fully connected head to convert
//! dimensions.

use serde::{Deserialize, Serialize};

use crate::channel::{ObsMode, SystemConfig};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, ModelSpec, Tensor};
use crate::numerics::{dft_shift_matrix, CMatrix};

use super::{Estimate, EstimateInput, Estimator, EstimatorKind, Normalizer};

/// Convolutional architecture knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    /// Convolutional blocks (N_B).
    pub n_blocks: usize,
    /// Filters per Conv1D layer (F).
    pub filters: usize,
    /// Filter size of the first block.
    pub k_in: usize,
    /// Filter size of the remaining blocks.
    pub k_hidden: usize,
    /// Filter size of the output layer.
    pub k_out: usize,
    pub stride: usize,
    /// Attention reduction ratio.
    pub ratio: usize,
}

impl Default for CnnArch {
    /// Full-scale settings: four blocks of 96 filters, sizes 7/5/1, stride 1.
    fn default() -> Self {
        Self {
            n_blocks: 4,
            filters: 96,
            k_in: 7,
            k_hidden: 5,
            k_out: 1,
            stride: 1,
            ratio: 2,
        }
    }
}

impl CnnArch {
    /// Desk-scale settings: two blocks of 32 filters.
    pub fn desk() -> Self {
        Self {
            n_blocks: 2,
            filters: 32,
            ..Self::default()
        }
    }
}

/// Plain fully connected baseline: hidden layer widths (the output layer is
/// always 2N).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnnArch {
    pub hidden: Vec<usize>,
}

impl Default for FnnArch {
    /// HAD-scale hidden widths.
    fn default() -> Self {
        Self {
            hidden: vec![256, 512],
        }
    }
}

impl FnnArch {
    /// Hidden widths used without HAD (larger input dimension).
    pub fn full_array() -> Self {
        Self {
            hidden: vec![512, 1024],
        }
    }
}

/// Attention-embedded fully connected architecture: one hidden layer of
/// `features x channels` neurons reshaped to a `(features, channels)` matrix
/// for the attention module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnnAttArch {
    pub features: usize,
    pub channels: usize,
    pub ratio: usize,
}

impl Default for FnnAttArch {
    /// Full-scale reshape: 3072 neurons as 192 channels of 16 features.
    fn default() -> Self {
        Self {
            features: 16,
            channels: 192,
            ratio: 2,
        }
    }
}

impl FnnAttArch {
    /// Desk-scale reshape: 1024 neurons as 128 channels of 8 features.
    pub fn desk() -> Self {
        Self {
            features: 8,
            channels: 128,
            ratio: 2,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.features * self.channels
    }
}

/// Builds the convolutional estimator spec. Without HAD the input is the
/// `(N, 2)` angular LS estimate and the head is a 2-filter convolution; with
/// HAD the input is the `(M, 2)` received vector and the head is a fully
/// connected dimension conversion to `2N`.
pub fn build_cnn_spec(
    attention: bool,
    arch: &CnnArch,
    n_antennas: usize,
    n_rf_chains: usize,
    mode: ObsMode,
) -> Result<ModelSpec> {
    if arch.n_blocks == 0 {
        return Err(Error::Config("cnn: need at least one block".into()));
    }
    if attention && arch.filters % arch.ratio != 0 {
        return Err(Error::Config(format!(
            "cnn: filters {} not divisible by attention ratio {}",
            arch.filters, arch.ratio
        )));
    }
    let positions = match mode {
        ObsMode::FullArray => n_antennas,
        ObsMode::Had => n_rf_chains,
    };
    let mut layers = Vec::new();
    for block in 0..arch.n_blocks {
        layers.push(LayerSpec::Conv1d {
            in_ch: if block == 0 { 2 } else { arch.filters },
            out_ch: arch.filters,
            ksize: if block == 0 { arch.k_in } else { arch.k_hidden },
            stride: arch.stride,
            same_pad: true,
            bias: true,
        });
        layers.push(LayerSpec::BatchNorm {
            features: arch.filters,
        });
        layers.push(LayerSpec::Relu);
        if attention {
            layers.push(LayerSpec::Attention {
                channels: arch.filters,
                ratio: arch.ratio,
            });
        }
    }
    match mode {
        ObsMode::FullArray => {
            layers.push(LayerSpec::Conv1d {
                in_ch: arch.filters,
                out_ch: 2,
                ksize: arch.k_out,
                stride: arch.stride,
                same_pad: true,
                bias: true,
            });
            // (N, 2) re/im rows, flattened interleaved to match the targets.
            layers.push(LayerSpec::Flatten);
        }
        ObsMode::Had => {
            layers.push(LayerSpec::Flatten);
            layers.push(LayerSpec::Dense {
                d_in: positions * arch.filters,
                d_out: 2 * n_antennas,
                bias: true,
            });
        }
    }
    Ok(ModelSpec {
        input_shape: vec![positions, 2],
        layers,
    })
}

/// Builds the plain fully connected baseline: hidden layers with ReLU then
/// batch norm, and a linear output layer of `2N` neurons.
pub fn build_fnn_spec(arch: &FnnArch, in_dim: usize, n_antennas: usize) -> Result<ModelSpec> {
    if arch.hidden.is_empty() {
        return Err(Error::Config("fnn: need at least one hidden layer".into()));
    }
    let mut layers = Vec::new();
    let mut width = in_dim;
    for &h in &arch.hidden {
        layers.push(LayerSpec::Dense {
            d_in: width,
            d_out: h,
            bias: true,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::BatchNorm { features: h });
        width = h;
    }
    layers.push(LayerSpec::Dense {
        d_in: width,
        d_out: 2 * n_antennas,
        bias: true,
    });
    Ok(ModelSpec {
        input_shape: vec![in_dim],
        layers,
    })
}

/// Builds the attention-embedded fully connected estimator: one hidden layer
/// (ReLU then batch norm), reshape to `(F, C)`, attention, flatten, linear
/// output of `2N`.
pub fn build_fnn_att_spec(
    arch: &FnnAttArch,
    in_dim: usize,
    n_antennas: usize,
) -> Result<ModelSpec> {
    if arch.channels % arch.ratio != 0 {
        return Err(Error::Config(format!(
            "fnn-att: channels {} not divisible by ratio {}",
            arch.channels, arch.ratio
        )));
    }
    let hidden = arch.hidden_width();
    Ok(ModelSpec {
        input_shape: vec![in_dim],
        layers: vec![
            LayerSpec::Dense {
                d_in: in_dim,
                d_out: hidden,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm { features: hidden },
            LayerSpec::Reshape {
                features: arch.features,
                channels: arch.channels,
            },
            LayerSpec::Attention {
                channels: arch.channels,
                ratio: arch.ratio,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                d_in: hidden,
                d_out: 2 * n_antennas,
                bias: true,
            },
        ],
    })
}

/// Spec for any neural estimator kind under a system configuration.
pub fn spec_for(kind: &EstimatorKind, cfg: &SystemConfig, mode: ObsMode) -> Result<ModelSpec> {
    let n = cfg.n_antennas;
    let m = cfg.n_rf_chains;
    let in_dim = match mode {
        ObsMode::FullArray => 2 * n,
        ObsMode::Had => 2 * m,
    };
    match kind {
        EstimatorKind::Cnn { arch } => build_cnn_spec(false, arch, n, m, mode),
        EstimatorKind::CnnAtt { arch } => build_cnn_spec(true, arch, n, m, mode),
        EstimatorKind::Fnn { arch } => build_fnn_spec(arch, in_dim, n),
        EstimatorKind::FnnAtt { arch } => build_fnn_att_spec(arch, in_dim, n),
        other => Err(Error::Config(format!(
            "{} is not a neural estimator",
            other.tag()
        ))),
    }
}

/// A trained (or freshly initialized) network plus its frozen input
/// normalizer, behind the estimator interface.
pub struct NeuralEstimator {
    pub kind: EstimatorKind,
    pub mode: ObsMode,
    pub n_antennas: usize,
    pub model: Model<f32>,
    pub normalizer: Normalizer,
    f: CMatrix,
}

impl NeuralEstimator {
    pub fn new(
        kind: EstimatorKind,
        mode: ObsMode,
        n_antennas: usize,
        model: Model<f32>,
        normalizer: Normalizer,
    ) -> Self {
        Self {
            kind,
            mode,
            n_antennas,
            model,
            normalizer,
            f: dft_shift_matrix(n_antennas),
        }
    }

    pub fn transform(&self) -> &CMatrix {
        &self.f
    }

    /// Standardized feature row for one observation.
    pub fn input_features(&self, input: &EstimateInput<'_>) -> Result<Vec<f64>> {
        if input.obs.mode() != self.mode {
            return Err(Error::Config(format!(
                "{}: observation mode mismatch",
                self.kind.tag()
            )));
        }
        let mut feats = super::featurize(input.obs, &self.f);
        self.normalizer.transform_in_place(&mut feats)?;
        Ok(feats)
    }

    fn batch_tensor(&self, rows: &[Vec<f64>]) -> Result<Tensor<f32>> {
        let per = self.model.spec().input_shape.clone();
        let width: usize = per.iter().product();
        let mut shape = vec![rows.len()];
        shape.extend(per);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::Dim(format!(
                    "{}: feature width {} vs model input {width}",
                    self.kind.tag(),
                    row.len()
                )));
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Ok(Tensor::new(shape, data))
    }

    /// Saves the model checkpoint with the estimator metadata embedded.
    pub fn save(&mut self, path: &std::path::Path) -> Result<()> {
        let meta = serde_json::json!({
            "estimator": self.kind,
            "mode": self.mode,
            "n_antennas": self.n_antennas,
            "normalizer": self.normalizer,
        });
        self.model.save_checkpoint(path, meta)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (model, meta) = Model::<f32>::load_checkpoint(path)?;
        let kind: EstimatorKind = serde_json::from_value(
            meta.get("estimator")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing estimator kind".into()))?,
        )?;
        let mode: ObsMode = serde_json::from_value(
            meta.get("mode")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing mode".into()))?,
        )?;
        let n_antennas: usize = serde_json::from_value(
            meta.get("n_antennas")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing n_antennas".into()))?,
        )?;
        let normalizer: Normalizer = serde_json::from_value(
            meta.get("normalizer")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing normalizer".into()))?,
        )?;
        Ok(Self::new(kind, mode, n_antennas, model, normalizer))
    }
}

impl Estimator for NeuralEstimator {
    fn name(&self) -> String {
        self.kind.tag()
    }

    fn estimate(&self, input: EstimateInput<'_>) -> Result<Estimate> {
        Ok(self.estimate_batch(&[input])?.pop().unwrap())
    }

    fn estimate_batch(&self, inputs: &[EstimateInput<'_>]) -> Result<Vec<Estimate>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(512) {
            let rows: Vec<Vec<f64>> = chunk
                .iter()
                .map(|i| self.input_features(i))
                .collect::<Result<_>>()?;
            let x = self.batch_tensor(&rows)?;
            let y = self.model.infer(&x)?;
            let width = y.len() / chunk.len();
            if width != 2 * self.n_antennas {
                return Err(Error::Dim(format!(
                    "{}: network emitted {width} values per sample, expected {}",
                    self.kind.tag(),
                    2 * self.n_antennas
                )));
            }
            for row in y.data().chunks_exact(width) {
                let flat: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                out.push(super::postprocess(&flat, &self.f)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Dataset, ObsMode};
    use crate::nn::Model;

    fn paper_cfg() -> SystemConfig {
        SystemConfig::paper()
    }

    #[test]
    fn cnn_weight_count_matches_closed_form() {
        // 2 (L_I + L_O) F + L_H (N_B - 1) F^2 at full scale = 139,776.
        let arch = CnnArch::default();
        let spec =
            build_cnn_spec(false, &arch, 128, 32, ObsMode::FullArray).unwrap();
        let model = Model::<f32>::new(spec, 0).unwrap();
        let counts = model.param_counts();
        let f = arch.filters;
        let want = 2 * (arch.k_in + arch.k_out) * f + arch.k_hidden * (arch.n_blocks - 1) * f * f;
        assert_eq!(counts.weights, want);
        assert_eq!(want, 139_776);
    }

    #[test]
    fn attention_adds_nb_f_squared_weights() {
        let arch = CnnArch::default();
        let plain = Model::<f32>::new(
            build_cnn_spec(false, &arch, 128, 32, ObsMode::FullArray).unwrap(),
            0,
        )
        .unwrap();
        let att = Model::<f32>::new(
            build_cnn_spec(true, &arch, 128, 32, ObsMode::FullArray).unwrap(),
            0,
        )
        .unwrap();
        assert_eq!(
            att.param_counts().weights - plain.param_counts().weights,
            arch.n_blocks * arch.filters * arch.filters
        );
    }

    #[test]
    fn cnn_preserves_feature_shape() {
        // Same padding keeps all N positions; two output filters give the
        // re/im pair per position, flattened interleaved.
        let arch = CnnArch::desk();
        let spec = build_cnn_spec(true, &arch, 64, 16, ObsMode::FullArray).unwrap();
        let model = Model::<f32>::new(spec, 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![3, 64, 2]);
        let y = model.infer(&x).unwrap();
        assert_eq!(y.shape(), &[3, 128]);
    }

    #[test]
    fn fnn_att_weight_count_matches_closed_form() {
        // FC (2M + 2N) + C^2 at full scale = 1,019,904.
        let cfg = paper_cfg();
        let arch = FnnAttArch::default();
        assert_eq!(arch.hidden_width(), 3072);
        let spec = build_fnn_att_spec(&arch, 2 * cfg.n_rf_chains, cfg.n_antennas).unwrap();
        let model = Model::<f32>::new(spec, 0).unwrap();
        let fc = arch.hidden_width();
        let want = fc * (2 * cfg.n_rf_chains + 2 * cfg.n_antennas)
            + arch.channels * arch.channels;
        assert_eq!(model.param_counts().weights, want);
        assert_eq!(want, 1_019_904);
    }

    #[test]
    fn had_cnn_converts_dimensions_with_dense_head() {
        let arch = CnnArch::desk();
        let spec = build_cnn_spec(true, &arch, 64, 16, ObsMode::Had).unwrap();
        let model = Model::<f32>::new(spec, 2).unwrap();
        let x = Tensor::<f32>::zeros(vec![2, 16, 2]);
        let y = model.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 128]);
    }

    #[test]
    fn estimator_roundtrips_through_checkpoint() {
        let mut cfg = SystemConfig::desk();
        cfg.n_antennas = 16;
        cfg.n_rf_chains = 4;
        cfg.snr_db = vec![10.0];
        cfg.master_seed = 33;
        let ds = Dataset::generate(&cfg, ObsMode::Had, 8, 0).unwrap();

        let kind = EstimatorKind::FnnAtt {
            arch: FnnAttArch {
                features: 4,
                channels: 8,
                ratio: 2,
            },
        };
        let spec = spec_for(&kind, &cfg, ObsMode::Had).unwrap();
        let model = Model::<f32>::new(spec, 5).unwrap();
        let f = dft_shift_matrix(cfg.n_antennas);
        let feats: Vec<f64> = ds
            .observations
            .iter()
            .flat_map(|per| super::super::featurize(&per[0], &f))
            .collect();
        let norm = Normalizer::fit(&feats, 2 * cfg.n_rf_chains).unwrap();
        let mut est = NeuralEstimator::new(kind, ObsMode::Had, cfg.n_antennas, model, norm);

        let inputs: Vec<EstimateInput> = ds
            .samples
            .iter()
            .zip(ds.observations.iter())
            .enumerate()
            .map(|(i, (s, o))| EstimateInput {
                obs: &o[0],
                sample: s,
                ordinal: i as u64,
            })
            .collect();
        let before = est.estimate_batch(&inputs).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.ckpt");
        est.save(&path).unwrap();
        let loaded = NeuralEstimator::load(&path).unwrap();
        let after = loaded.estimate_batch(&inputs).unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a.h_hat.as_slice(), b.h_hat.as_slice());
        }
    }
}
