//! Sequential models: a declarative spec, the live layer states, and the
//! checkpoint format (JSON header plus little-endian f32 parameter blob).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamDomain};

use super::layers::{AttentionCapture, LayerSpec, LayerState};
use super::tensor::{Real, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Declarative layer chain plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Shape of one input sample (the batch axis is prepended at run time).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Weight/bias/batch-norm parameter counts of a built model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub weights: usize,
    pub biases: usize,
    pub batch_norm: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.batch_norm
    }
}

/// A spec instantiated with parameters. Training mutates it exclusively;
/// a frozen model only ever runs `infer`, which is pure.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    spec: ModelSpec,
    layers: Vec<LayerState<T>>,
}

impl<T: Real> Model<T> {
    /// Builds the model with Xavier-initialized weights; layer `i` draws from
    /// stream `(seed, Init, i)`, so initialization is reproducible.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                let mut stream = RngStream::for_ordinal(seed, StreamDomain::Init, i as u64);
                LayerState::from_spec(ls, &mut stream)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    /// Training forward pass: caches activations, updates batch-norm running
    /// statistics, and rejects non-finite activations.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        input.check_finite("model input")?;
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(&cur)?;
            cur.check_finite(&format!("forward output of layer {i} ({})", layer.kind_name()))?;
        }
        Ok(cur)
    }

    /// Backward pass for the most recent `forward_train`. Accumulates
    /// parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        grad_out.check_finite("loss gradient")?;
        let mut cur = grad_out.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            cur = layer.backward(&cur)?;
            cur.check_finite(&format!("backward output of layer {i} ({})", layer.kind_name()))?;
        }
        Ok(cur)
    }

    /// Evaluation-mode inference: pure function of (parameters, input).
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        input.check_finite("model input")?;
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur, None)?;
        }
        cur.check_finite("inference output")?;
        Ok(cur)
    }

    /// Inference that also captures every attention map, in network order.
    pub fn infer_capture(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<AttentionCapture<T>>)> {
        input.check_finite("model input")?;
        let mut captures = Vec::new();
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur, Some(&mut captures))?;
        }
        cur.check_finite("inference output")?;
        Ok((cur, captures))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.ensure_grad();
            p.zero_grad();
        }
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut counts = ParamCounts {
            weights: 0,
            biases: 0,
            batch_norm: 0,
        };
        for l in &self.layers {
            let (w, b, bn) = l.param_counts();
            counts.weights += w;
            counts.biases += b;
            counts.batch_norm += bn;
        }
        counts
    }

    /// Indices (into the layer list) of the attention modules.
    pub fn attention_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerState::Attention(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copies all trainable parameters and persistent state (batch-norm
    /// running statistics), for best-epoch restoration.
    pub fn snapshot(&mut self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = self
            .params_mut()
            .iter()
            .map(|p| p.data().to_vec())
            .collect();
        for l in &self.layers {
            for s in l.persistent_state() {
                out.push(s.clone());
            }
        }
        out
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<()> {
        let n_params = self.params_mut().len();
        let n_state: usize = self.layers.iter().map(|l| l.persistent_state().len()).sum();
        if snapshot.len() != n_params + n_state {
            return Err(Error::Train("model restore: snapshot length mismatch".into()));
        }
        for (p, saved) in self.params_mut().into_iter().zip(snapshot.iter()) {
            if p.len() != saved.len() {
                return Err(Error::Train("model restore: parameter shape mismatch".into()));
            }
            p.data_mut().copy_from_slice(saved);
        }
        let mut idx = n_params;
        for l in self.layers.iter_mut() {
            for s in l.persistent_state_mut() {
                if s.len() != snapshot[idx].len() {
                    return Err(Error::Train("model restore: state shape mismatch".into()));
                }
                s.copy_from_slice(&snapshot[idx]);
                idx += 1;
            }
        }
        Ok(())
    }

    /// Smallest |pre-activation| seen by any ReLU in the most recent
    /// `forward_train`, or `None` if the model has no ReLU. Supports the
    /// gradient-check oracle's kink exclusion: finite differences are only
    /// trusted when every ReLU input is clear of zero.
    pub fn relu_kink_margin(&self) -> Option<f64> {
        let mut margin: Option<f64> = None;
        let mut fold = |v: f64| {
            margin = Some(match margin {
                Some(m) => m.min(v),
                None => v,
            });
        };
        for l in &self.layers {
            match l {
                LayerState::Relu(r) => {
                    if let Some(t) = r.cached_input_ref() {
                        for v in t.data() {
                            fold(v.as_f64().abs());
                        }
                    }
                }
                LayerState::Attention(a) => {
                    if let Some(pre) = a.cached_hidden_pre() {
                        for v in pre {
                            fold(v.as_f64().abs());
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

// ---------------------------------------------------------------------------
// Checkpoints (f32 on disk)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    spec: ModelSpec,
    /// Total f32 count in the blob (parameters then persistent state, in
    /// layer order).
    blob_len: usize,
    /// Caller-owned metadata (estimator kind, normalizer, config echo).
    meta: serde_json::Value,
}

impl Model<f32> {
    /// Writes a checkpoint: one JSON header line, a newline, then the raw
    /// little-endian f32 blob. Round-trips bit-exactly.
    pub fn save_checkpoint(&mut self, path: &Path, meta: serde_json::Value) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let blob: Vec<f32> = self.snapshot().into_iter().flatten().collect();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: self.spec.clone(),
            blob_len: blob.len(),
            meta,
        };
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(blob.len() * 4);
        for v in blob {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
        Ok(())
    }

    /// Loads a checkpoint and the caller metadata stored with it.
    pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, serde_json::Value)> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format version {}",
                header.format_version
            )));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != header.blob_len * 4 {
            return Err(Error::Format(format!(
                "checkpoint blob is {} bytes, expected {}",
                bytes.len(),
                header.blob_len * 4
            )));
        }
        let blob: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut model = Model::<f32>::new(header.spec, 0)?;
        let shapes: Vec<usize> = {
            let mut v: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
            for l in model.layers() {
                v.extend(l.persistent_state().iter().map(|s| s.len()));
            }
            v
        };
        if shapes.iter().sum::<usize>() != blob.len() {
            return Err(Error::Format("checkpoint blob length mismatch".into()));
        }
        let mut snapshot = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for len in shapes {
            snapshot.push(blob[offset..offset + len].to_vec());
            offset += len;
        }
        model.restore(&snapshot)?;
        Ok((model, header.meta))
    }
}
