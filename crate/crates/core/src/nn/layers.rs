//! Layer implementations.
//!
//! Exactly the layer set the estimation networks need: 1-D convolution,
//! fully connected, batch norm, ReLU, sigmoid, global average pooling, the
//! squeeze-excitation attention module, reshape and flatten.
//!
//! Training uses `forward` (caches activations, `&mut self`) followed by
//! `backward` (accumulates parameter gradients, returns the input gradient).
//! Frozen models use `infer` (`&self`, pure, optionally capturing attention
//! maps). Batch-level loops are parallelized so that every output element is
//! written by exactly one task and every reduction runs serially in index
//! order: results are bit-stable regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::init::xavier_fill;
use super::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Batch rows per parallel task in gradient reductions. Fixed (never derived
/// from the thread count) so partial-sum boundaries, and therefore results,
/// do not depend on the machine's parallelism.
const GRAD_CHUNK_ROWS: usize = 64;

/// Declarative layer description; the serializable half of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        same_pad: bool,
        bias: bool,
    },
    Dense {
        d_in: usize,
        d_out: usize,
        bias: bool,
    },
    BatchNorm {
        features: usize,
    },
    Relu,
    Sigmoid,
    GlobalAvgPool,
    Attention {
        channels: usize,
        ratio: usize,
    },
    Reshape {
        features: usize,
        channels: usize,
    },
    Flatten,
}

/// A layer with its trainable parameters, running statistics, and the
/// activation caches backward needs.
#[derive(Debug, Clone)]
pub enum LayerState<T: Real> {
    Conv1d(Conv1d<T>),
    Dense(Dense<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    GlobalAvgPool(GlobalAvgPool<T>),
    Attention(Attention<T>),
    Reshape(Reshape),
    Flatten(Flatten),
}

/// Attention maps captured during inference: one `(B, C)` tensor per
/// attention layer, in network order.
#[derive(Debug, Clone)]
pub struct AttentionCapture<T: Real> {
    pub maps: Tensor<T>,
}

impl<T: Real> LayerState<T> {
    pub fn from_spec(spec: &LayerSpec, stream: &mut RngStream) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                ksize,
                stride,
                same_pad,
                bias,
            } => LayerState::Conv1d(Conv1d::new(
                in_ch, out_ch, ksize, stride, same_pad, bias, stream,
            )?),
            LayerSpec::Dense { d_in, d_out, bias } => {
                LayerState::Dense(Dense::new(d_in, d_out, bias, stream))
            }
            LayerSpec::BatchNorm { features } => LayerState::BatchNorm(BatchNorm::new(features)),
            LayerSpec::Relu => LayerState::Relu(Relu::default()),
            LayerSpec::Sigmoid => LayerState::Sigmoid(Sigmoid::default()),
            LayerSpec::GlobalAvgPool => LayerState::GlobalAvgPool(GlobalAvgPool::default()),
            LayerSpec::Attention { channels, ratio } => {
                LayerState::Attention(Attention::new(channels, ratio, stream)?)
            }
            LayerSpec::Reshape { features, channels } => LayerState::Reshape(Reshape {
                features,
                channels,
            }),
            LayerSpec::Flatten => LayerState::Flatten(Flatten::default()),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerState::Conv1d(_) => "conv1d",
            LayerState::Dense(_) => "fully-connected",
            LayerState::BatchNorm(_) => "batch-norm",
            LayerState::Relu(_) => "relu",
            LayerState::Sigmoid(_) => "sigmoid",
            LayerState::GlobalAvgPool(_) => "global-avg-pool",
            LayerState::Attention(_) => "attention",
            LayerState::Reshape(_) => "reshape",
            LayerState::Flatten(_) => "flatten",
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LayerState::Conv1d(l) => l.forward(input),
            LayerState::Dense(l) => l.forward(input),
            LayerState::BatchNorm(l) => l.forward(input),
            LayerState::Relu(l) => l.forward(input),
            LayerState::Sigmoid(l) => l.forward(input),
            LayerState::GlobalAvgPool(l) => l.forward(input),
            LayerState::Attention(l) => l.forward(input),
            LayerState::Reshape(l) => l.apply(input),
            LayerState::Flatten(l) => l.apply(input),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LayerState::Conv1d(l) => l.backward(grad_out),
            LayerState::Dense(l) => l.backward(grad_out),
            LayerState::BatchNorm(l) => l.backward(grad_out),
            LayerState::Relu(l) => l.backward(grad_out),
            LayerState::Sigmoid(l) => l.backward(grad_out),
            LayerState::GlobalAvgPool(l) => l.backward(grad_out),
            LayerState::Attention(l) => l.backward(grad_out),
            LayerState::Reshape(l) => l.unapply(grad_out),
            LayerState::Flatten(l) => l.unapply(grad_out),
        }
    }

    pub fn infer(
        &self,
        input: &Tensor<T>,
        capture: Option<&mut Vec<AttentionCapture<T>>>,
    ) -> Result<Tensor<T>> {
        match self {
            LayerState::Conv1d(l) => l.run(input),
            LayerState::Dense(l) => l.run(input),
            LayerState::BatchNorm(l) => l.infer(input),
            LayerState::Relu(_) => Ok(relu_kernel(input)),
            LayerState::Sigmoid(_) => Ok(sigmoid_kernel(input)),
            LayerState::GlobalAvgPool(_) => gap_kernel(input),
            LayerState::Attention(l) => l.infer(input, capture),
            LayerState::Reshape(l) => l.shape_only(input),
            LayerState::Flatten(l) => l.shape_only(input),
        }
    }

    /// Trainable parameters in a fixed order (weights before biases).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            LayerState::Conv1d(l) => {
                let mut v = vec![&mut l.weight];
                v.extend(l.bias.as_mut());
                v
            }
            LayerState::Dense(l) => {
                let mut v = vec![&mut l.weight];
                v.extend(l.bias.as_mut());
                v
            }
            LayerState::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            LayerState::Attention(l) => vec![&mut l.w_squeeze, &mut l.w_excite],
            _ => Vec::new(),
        }
    }

    /// (weight count, bias count, batch-norm affine count). Weight count is
    /// what the closed-form complexity accounting uses.
    pub fn param_counts(&self) -> (usize, usize, usize) {
        match self {
            LayerState::Conv1d(l) => {
                (l.weight.len(), l.bias.as_ref().map_or(0, |b| b.len()), 0)
            }
            LayerState::Dense(l) => {
                (l.weight.len(), l.bias.as_ref().map_or(0, |b| b.len()), 0)
            }
            LayerState::BatchNorm(l) => (0, 0, l.gamma.len() + l.beta.len()),
            LayerState::Attention(l) => (l.w_squeeze.len() + l.w_excite.len(), 0, 0),
            _ => (0, 0, 0),
        }
    }

    /// Non-trainable state that must survive a checkpoint round trip
    /// (batch-norm running statistics), in a fixed order.
    pub fn persistent_state(&self) -> Vec<&Vec<T>> {
        match self {
            LayerState::BatchNorm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn persistent_state_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            LayerState::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }
}

fn rank3(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, p, c] => Ok((*b, *p, *c)),
        s => Err(Error::Dim(format!(
            "{what}: expected rank-3 input, got {s:?}"
        ))),
    }
}

fn rank2(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [b, d] => Ok((*b, *d)),
        s => Err(Error::Dim(format!(
            "{what}: expected rank-2 input, got {s:?}"
        ))),
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    y.iter_mut().zip(x.iter()).for_each(|(yv, &xv)| {
        *yv = *yv + alpha * xv;
    });
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

/// 1-D convolution (cross-correlation plus bias) over `(B, P, C)` tensors.
/// With same-padding and stride 1 the position axis length is preserved;
/// same-padding requires an odd filter size.
#[derive(Debug, Clone)]
pub struct Conv1d<T: Real> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub same_pad: bool,
    /// Weights laid out `[out_ch][ksize][in_ch]`.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        same_pad: bool,
        bias: bool,
        stream: &mut RngStream,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv1d: stride must be >= 1".into()));
        }
        if same_pad && ksize % 2 == 0 {
            return Err(Error::Config(
                "conv1d: same-padding requires an odd filter size".into(),
            ));
        }
        let mut weight = Tensor::zeros(vec![out_ch, ksize, in_ch]).with_grad();
        xavier_fill(&mut weight, ksize * in_ch, ksize * out_ch, stream);
        let bias = bias.then(|| Tensor::zeros(vec![out_ch]).with_grad());
        Ok(Self {
            in_ch,
            out_ch,
            ksize,
            stride,
            same_pad,
            weight,
            bias,
            cached_input: None,
        })
    }

    fn pad(&self) -> usize {
        if self.same_pad {
            (self.ksize - 1) / 2
        } else {
            0
        }
    }

    fn out_positions(&self, p: usize) -> Result<usize> {
        let padded = p + 2 * self.pad();
        if padded < self.ksize {
            return Err(Error::Dim(format!(
                "conv1d: input length {p} shorter than filter {}",
                self.ksize
            )));
        }
        Ok((padded - self.ksize) / self.stride + 1)
    }

    /// Weights transposed to `[ksize][in_ch][out_ch]` so the forward inner
    /// loop is an element-wise accumulation over output channels (wide,
    /// vectorizable, and with a fixed summation order).
    fn transposed_weight(&self) -> Vec<T> {
        let (co, l, cin) = (self.out_ch, self.ksize, self.in_ch);
        let w = self.weight.data();
        let mut wt = vec![T::zero(); w.len()];
        for c in 0..co {
            for dl in 0..l {
                for ci in 0..cin {
                    wt[(dl * cin + ci) * co + c] = w[(c * l + dl) * cin + ci];
                }
            }
        }
        wt
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, p, cin) = rank3(input, "conv1d")?;
        if cin != self.in_ch {
            return Err(Error::Dim(format!(
                "conv1d: input has {cin} channels, layer expects {}",
                self.in_ch
            )));
        }
        let q_len = self.out_positions(p)?;
        let (co, l, stride, pad) = (self.out_ch, self.ksize, self.stride, self.pad());
        let mut out = Tensor::zeros(vec![bsz, q_len, co]);
        let wt = self.transposed_weight();
        let bias = self.bias.as_ref().map(|b| b.data());
        let in_data = input.data();

        out.data_mut()
            .par_chunks_mut(q_len * co)
            .zip(in_data.par_chunks(p * cin))
            .for_each(|(out_b, in_b)| {
                for q in 0..q_len {
                    let orow = &mut out_b[q * co..(q + 1) * co];
                    if let Some(bv) = bias {
                        orow.copy_from_slice(bv);
                    }
                    let base = (q * stride) as isize - pad as isize;
                    for dl in 0..l {
                        let pp = base + dl as isize;
                        if pp < 0 || pp >= p as isize {
                            continue;
                        }
                        let irow = &in_b[pp as usize * cin..(pp as usize + 1) * cin];
                        for (ci, &x) in irow.iter().enumerate() {
                            axpy(x, &wt[(dl * cin + ci) * co..(dl * cin + ci + 1) * co], orow);
                        }
                    }
                }
            });
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.run(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::Train("conv1d: backward before forward".into()))?;
        let (bsz, p, cin) = rank3(&input, "conv1d")?;
        let (gb, q_len, gco) = rank3(grad_out, "conv1d grad")?;
        if gb != bsz || gco != self.out_ch || q_len != self.out_positions(p)? {
            return Err(Error::Dim("conv1d: gradient shape mismatch".into()));
        }
        let (co, l, stride, pad) = (self.out_ch, self.ksize, self.stride, self.pad());
        let in_data = input.data();
        let g_data = grad_out.data();

        // Weight and bias gradients: fixed-size batch chunks accumulate
        // transposed partials ([ksize][in_ch][out_ch], L1-resident, contiguous
        // inner axis), reduced serially in chunk order so the sum is
        // bit-stable, then written back in weight layout.
        let partials: Vec<(Vec<T>, Vec<T>)> = (0..bsz)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK_ROWS)
            .map(|rows| {
                let mut dwt = vec![T::zero(); l * cin * co];
                let mut db = vec![T::zero(); co];
                for &b in rows {
                    let in_b = &in_data[b * p * cin..(b + 1) * p * cin];
                    let g_b = &g_data[b * q_len * co..(b + 1) * q_len * co];
                    for q in 0..q_len {
                        let grow = &g_b[q * co..(q + 1) * co];
                        axpy(T::one(), grow, &mut db);
                        let base = (q * stride) as isize - pad as isize;
                        for dl in 0..l {
                            let pp = base + dl as isize;
                            if pp < 0 || pp >= p as isize {
                                continue;
                            }
                            let irow = &in_b[pp as usize * cin..(pp as usize + 1) * cin];
                            for (ci, &x) in irow.iter().enumerate() {
                                axpy(
                                    x,
                                    grow,
                                    &mut dwt[(dl * cin + ci) * co..(dl * cin + ci + 1) * co],
                                );
                            }
                        }
                    }
                }
                (dwt, db)
            })
            .collect();

        let mut dwt_total = vec![T::zero(); l * cin * co];
        let mut db_total = vec![T::zero(); co];
        for (dwt, db) in &partials {
            axpy(T::one(), dwt, &mut dwt_total);
            axpy(T::one(), db, &mut db_total);
        }
        {
            let dw = self.weight.grad_mut();
            for c in 0..co {
                for dl in 0..l {
                    for ci in 0..cin {
                        dw[(c * l + dl) * cin + ci] =
                            dw[(c * l + dl) * cin + ci] + dwt_total[(dl * cin + ci) * co + c];
                    }
                }
            }
        }
        if let Some(bias) = &mut self.bias {
            axpy(T::one(), &db_total, bias.grad_mut());
        }

        // Input gradient: one task per batch row.
        let w = self.weight.data();
        let mut grad_in = Tensor::zeros(vec![bsz, p, cin]);
        grad_in
            .data_mut()
            .par_chunks_mut(p * cin)
            .zip(g_data.par_chunks(q_len * co))
            .for_each(|(din_b, g_b)| {
                for q in 0..q_len {
                    let grow = &g_b[q * co..(q + 1) * co];
                    let base = (q * stride) as isize - pad as isize;
                    for dl in 0..l {
                        let pp = base + dl as isize;
                        if pp < 0 || pp >= p as isize {
                            continue;
                        }
                        let dirow = &mut din_b[pp as usize * cin..(pp as usize + 1) * cin];
                        for (c, &g) in grow.iter().enumerate() {
                            let wrow = &w[(c * l + dl) * cin..(c * l + dl + 1) * cin];
                            axpy(g, wrow, dirow);
                        }
                    }
                }
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Fully connected affine map over `(B, D)` tensors. Bias is optional; the
/// attention bottleneck layers run without it.
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    pub d_in: usize,
    pub d_out: usize,
    /// Weights laid out `[d_out][d_in]`.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(d_in: usize, d_out: usize, bias: bool, stream: &mut RngStream) -> Self {
        let mut weight = Tensor::zeros(vec![d_out, d_in]).with_grad();
        xavier_fill(&mut weight, d_in, d_out, stream);
        let bias = bias.then(|| Tensor::zeros(vec![d_out]).with_grad());
        Self {
            d_in,
            d_out,
            weight,
            bias,
            cached_input: None,
        }
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, din) = rank2(input, "fully-connected")?;
        if din != self.d_in {
            return Err(Error::Dim(format!(
                "fully-connected: input width {din}, layer expects {}",
                self.d_in
            )));
        }
        let dout = self.d_out;
        // Transposed to [d_in][d_out]: the inner loop accumulates over the
        // output axis element-wise, in a fixed order.
        let w = self.weight.data();
        let mut wt = vec![T::zero(); w.len()];
        for j in 0..dout {
            for i in 0..din {
                wt[i * dout + j] = w[j * din + i];
            }
        }
        let bias = self.bias.as_ref().map(|b| b.data());
        let mut out = Tensor::zeros(vec![bsz, dout]);
        out.data_mut()
            .par_chunks_mut(dout)
            .zip(input.data().par_chunks(din))
            .for_each(|(orow, irow)| {
                if let Some(bv) = bias {
                    orow.copy_from_slice(bv);
                }
                for (i, &x) in irow.iter().enumerate() {
                    axpy(x, &wt[i * dout..(i + 1) * dout], orow);
                }
            });
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.run(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::Train("fully-connected: backward before forward".into()))?;
        let (bsz, din) = rank2(&input, "fully-connected")?;
        let (gb, dout) = rank2(grad_out, "fully-connected grad")?;
        if gb != bsz || dout != self.d_out {
            return Err(Error::Dim("fully-connected: gradient shape mismatch".into()));
        }
        let in_data = input.data();
        let g_data = grad_out.data();

        // Weight and bias gradients via transposed per-chunk partials
        // ([d_in][d_out], contiguous over the output axis), reduced in fixed
        // chunk order.
        let partials: Vec<(Vec<T>, Vec<T>)> = (0..bsz)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK_ROWS)
            .map(|rows| {
                let mut dwt = vec![T::zero(); din * dout];
                let mut db = vec![T::zero(); dout];
                for &b in rows {
                    let grow = &g_data[b * dout..(b + 1) * dout];
                    axpy(T::one(), grow, &mut db);
                    let irow = &in_data[b * din..(b + 1) * din];
                    for (i, &x) in irow.iter().enumerate() {
                        axpy(x, grow, &mut dwt[i * dout..(i + 1) * dout]);
                    }
                }
                (dwt, db)
            })
            .collect();

        let mut dwt_total = vec![T::zero(); din * dout];
        let mut db_total = vec![T::zero(); dout];
        for (dwt, db) in &partials {
            axpy(T::one(), dwt, &mut dwt_total);
            axpy(T::one(), db, &mut db_total);
        }
        {
            let dw = self.weight.grad_mut();
            for j in 0..dout {
                for i in 0..din {
                    dw[j * din + i] = dw[j * din + i] + dwt_total[i * dout + j];
                }
            }
        }
        if let Some(bias) = &mut self.bias {
            axpy(T::one(), &db_total, bias.grad_mut());
        }

        // Input gradient: one task per batch row.
        let w = self.weight.data();
        let mut grad_in = Tensor::zeros(vec![bsz, din]);
        grad_in
            .data_mut()
            .par_chunks_mut(din)
            .zip(g_data.par_chunks(dout))
            .for_each(|(dirow, grow)| {
                for (j, &g) in grow.iter().enumerate() {
                    axpy(g, &w[j * din..(j + 1) * din], dirow);
                }
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

/// Batch normalization over the trailing (channel) axis. For `(B, P, C)`
/// inputs the statistics pool over batch and position; for `(B, C)` over the
/// batch only. Evaluation mode normalizes with running statistics and is
/// fully deterministic.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    pub features: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    in_shape: Vec<usize>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        let mut gamma = Tensor::zeros(vec![features]).with_grad();
        gamma.data_mut().iter_mut().for_each(|v| *v = T::one());
        let beta = Tensor::zeros(vec![features]).with_grad();
        Self {
            features,
            gamma,
            beta,
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            cache: None,
        }
    }

    fn dims(&self, t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
        let (b, p, c) = match t.shape() {
            [b, c] => (*b, 1, *c),
            [b, p, c] => (*b, *p, *c),
            s => {
                return Err(Error::Dim(format!(
                    "{what}: expected rank-2 or rank-3 input, got {s:?}"
                )))
            }
        };
        if c != self.features {
            return Err(Error::Dim(format!(
                "{what}: {c} channels, layer has {} features",
                self.features
            )));
        }
        Ok((b, p, c))
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, p, c) = self.dims(input, "batch-norm")?;
        if bsz < 2 {
            return Err(Error::Train(
                "batch-norm: train mode needs batch size >= 2".into(),
            ));
        }
        let count = bsz * p;
        let x = input.data();
        let eps = T::from_f64(BN_EPS);
        let inv_count = T::one() / T::from_f64(count as f64);

        // Row-major two-pass statistics: single streams over the data with a
        // channel-wide accumulator, fixed summation order.
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            axpy(T::one(), row, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_count);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for (ch, &v) in row.iter().enumerate() {
                let d = v - mean[ch];
                var[ch] = var[ch] + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v * inv_count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        // Running statistics (biased variance, matching train-time stats).
        let mom = T::from_f64(BN_MOMENTUM);
        let omm = T::one() - mom;
        for ch in 0..c {
            self.running_mean[ch] = mom * self.running_mean[ch] + omm * mean[ch];
            self.running_var[ch] = mom * self.running_var[ch] + omm * var[ch];
        }

        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut out = Tensor::zeros(input.shape().to_vec());
        let mut xhat = vec![T::zero(); x.len()];
        out.data_mut()
            .par_chunks_mut(c)
            .zip(xhat.par_chunks_mut(c))
            .zip(x.par_chunks(c))
            .for_each(|((orow, xh), xrow)| {
                for ch in 0..c {
                    let h = (xrow[ch] - mean[ch]) * inv_std[ch];
                    xh[ch] = h;
                    orow[ch] = gamma[ch] * h + beta[ch];
                }
            });

        self.cache = Some(BnCache {
            xhat,
            inv_std,
            in_shape: input.shape().to_vec(),
        });
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_b, _p, c) = self.dims(input, "batch-norm")?;
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let eps = T::from_f64(BN_EPS);
        let scale: Vec<T> = (0..c)
            .map(|ch| gamma[ch] / (self.running_var[ch] + eps).sqrt())
            .collect();
        let mut out = Tensor::zeros(input.shape().to_vec());
        out.data_mut()
            .par_chunks_mut(c)
            .zip(input.data().par_chunks(c))
            .for_each(|(orow, xrow)| {
                for ch in 0..c {
                    orow[ch] = scale[ch] * (xrow[ch] - self.running_mean[ch]) + beta[ch];
                }
            });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("batch-norm: backward before forward".into()))?;
        if grad_out.shape() != cache.in_shape.as_slice() {
            return Err(Error::Dim("batch-norm: gradient shape mismatch".into()));
        }
        let c = self.features;
        let count = grad_out.len() / c;
        let g = grad_out.data();
        let xhat = &cache.xhat;

        // Row-major per-channel reductions, fixed order.
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] = sum_g[ch] + grow[ch];
                sum_gx[ch] = sum_gx[ch] + grow[ch] * xrow[ch];
            }
        }

        {
            let dgamma = self.gamma.grad_mut();
            for ch in 0..c {
                dgamma[ch] = dgamma[ch] + sum_gx[ch];
            }
        }
        {
            let dbeta = self.beta.grad_mut();
            for ch in 0..c {
                dbeta[ch] = dbeta[ch] + sum_g[ch];
            }
        }

        let gamma = self.gamma.data();
        let cnt = T::from_f64(count as f64);
        let mut grad_in = Tensor::zeros(cache.in_shape.clone());
        grad_in
            .data_mut()
            .par_chunks_mut(c)
            .zip(g.par_chunks(c))
            .zip(xhat.par_chunks(c))
            .for_each(|((dirow, grow), xhrow)| {
                for ch in 0..c {
                    let term = grow[ch] - sum_g[ch] / cnt - xhrow[ch] * sum_gx[ch] / cnt;
                    dirow[ch] = gamma[ch] * cache.inv_std[ch] * term;
                }
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// Element-wise activations
// ---------------------------------------------------------------------------

fn relu_kernel<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    out
}

fn sigmoid_kernel<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    // Clamped away from {0, 1} so downstream gates stay in the open interval
    // even at single precision; the derivative there is ~0 anyway.
    let lo = T::GATE_FLOOR;
    let hi = T::one() - T::GATE_FLOOR;
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| {
        let s = T::one() / (T::one() + (-*v).exp());
        *v = s.max(lo).min(hi);
    });
    out
}

/// ReLU activation: `max(0, x)`, subgradient 0 at the kink.
#[derive(Debug, Clone, Default)]
pub struct Relu<T: Real> {
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    /// Input cached by the last `forward`, if backward has not consumed it.
    pub fn cached_input_ref(&self) -> Option<&Tensor<T>> {
        self.cached_input.as_ref()
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.cached_input = Some(input.clone());
        Ok(relu_kernel(input))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::Train("relu: backward before forward".into()))?;
        if input.shape() != grad_out.shape() {
            return Err(Error::Dim("relu: gradient shape mismatch".into()));
        }
        let mut grad_in = grad_out.clone();
        grad_in
            .data_mut()
            .iter_mut()
            .zip(input.data().iter())
            .for_each(|(g, &x)| {
                if x <= T::zero() {
                    *g = T::zero();
                }
            });
        Ok(grad_in)
    }
}

/// Logistic activation, output clamped strictly inside (0, 1).
#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T: Real> {
    cached_output: Option<Tensor<T>>,
}

impl<T: Real> Sigmoid<T> {
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = sigmoid_kernel(input);
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self
            .cached_output
            .take()
            .ok_or_else(|| Error::Train("sigmoid: backward before forward".into()))?;
        if out.shape() != grad_out.shape() {
            return Err(Error::Dim("sigmoid: gradient shape mismatch".into()));
        }
        let mut grad_in = grad_out.clone();
        grad_in
            .data_mut()
            .iter_mut()
            .zip(out.data().iter())
            .for_each(|(g, &s)| {
                *g = *g * s * (T::one() - s);
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// Global average pooling
// ---------------------------------------------------------------------------

fn gap_kernel<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (bsz, p, c) = rank3(input, "global-avg-pool")?;
    let x = input.data();
    let inv = T::one() / T::from_f64(p as f64);
    let mut out = Tensor::zeros(vec![bsz, 1, c]);
    out.data_mut()
        .par_chunks_mut(c)
        .zip(x.par_chunks(p * c))
        .for_each(|(orow, xb)| {
            for pos in 0..p {
                for ch in 0..c {
                    orow[ch] = orow[ch] + xb[pos * c + ch];
                }
            }
            for v in orow.iter_mut() {
                *v = *v * inv;
            }
        });
    Ok(out)
}

/// Mean over the position axis: `(B, P, C) -> (B, 1, C)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool<T: Real> {
    cached_in_shape: Vec<usize>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> GlobalAvgPool<T> {
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.cached_in_shape = input.shape().to_vec();
        gap_kernel(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cached_in_shape.is_empty() {
            return Err(Error::Train(
                "global-avg-pool: backward before forward".into(),
            ));
        }
        let (bsz, p, c) = (
            self.cached_in_shape[0],
            self.cached_in_shape[1],
            self.cached_in_shape[2],
        );
        let (gb, gp, gc) = rank3(grad_out, "global-avg-pool grad")?;
        if gb != bsz || gp != 1 || gc != c {
            return Err(Error::Dim("global-avg-pool: gradient shape mismatch".into()));
        }
        let inv = T::one() / T::from_f64(p as f64);
        let g = grad_out.data();
        let mut grad_in = Tensor::zeros(self.cached_in_shape.clone());
        grad_in
            .data_mut()
            .par_chunks_mut(p * c)
            .zip(g.par_chunks(c))
            .for_each(|(dib, grow)| {
                for pos in 0..p {
                    for ch in 0..c {
                        dib[pos * c + ch] = grow[ch] * inv;
                    }
                }
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// Squeeze-excitation attention
// ---------------------------------------------------------------------------

/// Channel attention: squeeze by global average pooling, run a bias-free
/// bottleneck (`C -> C/r -> C`) with ReLU then sigmoid, and scale each
/// channel of the input by the resulting gate.
#[derive(Debug, Clone)]
pub struct Attention<T: Real> {
    pub channels: usize,
    pub ratio: usize,
    /// Bottleneck weights `[C/r][C]`.
    pub w_squeeze: Tensor<T>,
    /// Expansion weights `[C][C/r]`.
    pub w_excite: Tensor<T>,
    cache: Option<AttnCache<T>>,
}

#[derive(Debug, Clone)]
struct AttnCache<T: Real> {
    input: Tensor<T>,
    pooled: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    gate: Vec<T>,
}

impl<T: Real> Attention<T> {
    pub fn new(channels: usize, ratio: usize, stream: &mut RngStream) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Config(format!(
                "attention: channels {channels} not divisible by ratio {ratio}"
            )));
        }
        let hidden = channels / ratio;
        let mut w_squeeze = Tensor::zeros(vec![hidden, channels]).with_grad();
        xavier_fill(&mut w_squeeze, channels, hidden, stream);
        let mut w_excite = Tensor::zeros(vec![channels, hidden]).with_grad();
        xavier_fill(&mut w_excite, hidden, channels, stream);
        Ok(Self {
            channels,
            ratio,
            w_squeeze,
            w_excite,
            cache: None,
        })
    }

    fn gates(&self, input: &Tensor<T>) -> Result<AttnCache<T>> {
        let (bsz, p, c) = rank3(input, "attention")?;
        if c != self.channels {
            return Err(Error::Dim(format!(
                "attention: {c} channels, module expects {}",
                self.channels
            )));
        }
        let hidden = self.channels / self.ratio;
        let x = input.data();
        let w1 = self.w_squeeze.data();
        let w2 = self.w_excite.data();
        let inv_p = T::one() / T::from_f64(p as f64);
        let lo = T::GATE_FLOOR;
        let hi = T::one() - T::GATE_FLOOR;

        let mut pooled = vec![T::zero(); bsz * c];
        let mut hidden_pre = vec![T::zero(); bsz * hidden];
        let mut hidden_act = vec![T::zero(); bsz * hidden];
        let mut gate = vec![T::zero(); bsz * c];

        pooled
            .par_chunks_mut(c)
            .zip(hidden_pre.par_chunks_mut(hidden))
            .zip(hidden_act.par_chunks_mut(hidden))
            .zip(gate.par_chunks_mut(c))
            .zip(x.par_chunks(p * c))
            .for_each(|((((z, a1), r1), m), xb)| {
                for pos in 0..p {
                    for ch in 0..c {
                        z[ch] = z[ch] + xb[pos * c + ch];
                    }
                }
                for v in z.iter_mut() {
                    *v = *v * inv_p;
                }
                for k in 0..hidden {
                    let pre = dot(&w1[k * c..(k + 1) * c], z);
                    a1[k] = pre;
                    r1[k] = if pre > T::zero() { pre } else { T::zero() };
                }
                for ch in 0..c {
                    let pre = dot(&w2[ch * hidden..(ch + 1) * hidden], r1);
                    let s = T::one() / (T::one() + (-pre).exp());
                    m[ch] = s.max(lo).min(hi);
                }
            });

        Ok(AttnCache {
            input: input.clone(),
            pooled,
            hidden_pre,
            hidden: hidden_act,
            gate,
        })
    }

    fn scale(&self, input: &Tensor<T>, gate: &[T]) -> Tensor<T> {
        let shape = input.shape().to_vec();
        let (_, p, c) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(shape);
        out.data_mut()
            .par_chunks_mut(p * c)
            .zip(input.data().par_chunks(p * c))
            .zip(gate.par_chunks(c))
            .for_each(|((ob, xb), m)| {
                for pos in 0..p {
                    for ch in 0..c {
                        ob[pos * c + ch] = xb[pos * c + ch] * m[ch];
                    }
                }
            });
        out
    }

    /// Pre-ReLU bottleneck activations cached by the last `forward`.
    pub fn cached_hidden_pre(&self) -> Option<&[T]> {
        self.cache.as_ref().map(|c| c.hidden_pre.as_slice())
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.gates(input)?;
        let out = self.scale(input, &cache.gate);
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn infer(
        &self,
        input: &Tensor<T>,
        capture: Option<&mut Vec<AttentionCapture<T>>>,
    ) -> Result<Tensor<T>> {
        let cache = self.gates(input)?;
        let out = self.scale(input, &cache.gate);
        if let Some(sink) = capture {
            let bsz = input.shape()[0];
            sink.push(AttentionCapture {
                maps: Tensor::new(vec![bsz, self.channels], cache.gate),
            });
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("attention: backward before forward".into()))?;
        let input = &cache.input;
        let (bsz, p, c) = rank3(input, "attention")?;
        if grad_out.shape() != input.shape() {
            return Err(Error::Dim("attention: gradient shape mismatch".into()));
        }
        let hidden = self.channels / self.ratio;
        let x = input.data();
        let g = grad_out.data();
        let w1 = self.w_squeeze.data();
        let w2 = self.w_excite.data();
        let inv_p = T::one() / T::from_f64(p as f64);

        // Per-sample chain back to the pooled vector.
        let mut d_gate_pre = vec![T::zero(); bsz * c]; // d loss / d a2
        let mut d_hidden = vec![T::zero(); bsz * hidden]; // d loss / d a1 (post-relu mask)
        let mut d_pooled = vec![T::zero(); bsz * c];
        d_gate_pre
            .par_chunks_mut(c)
            .zip(d_hidden.par_chunks_mut(hidden))
            .zip(d_pooled.par_chunks_mut(c))
            .enumerate()
            .for_each(|(b, ((da2, da1), dz))| {
                let xb = &x[b * p * c..(b + 1) * p * c];
                let gb = &g[b * p * c..(b + 1) * p * c];
                let m = &cache.gate[b * c..(b + 1) * c];
                let a1 = &cache.hidden_pre[b * hidden..(b + 1) * hidden];
                // dm = sum_p g * x (row-major), then through the sigmoid.
                for pos in 0..p {
                    let grow = &gb[pos * c..(pos + 1) * c];
                    let xrow = &xb[pos * c..(pos + 1) * c];
                    for ch in 0..c {
                        da2[ch] = da2[ch] + grow[ch] * xrow[ch];
                    }
                }
                for ch in 0..c {
                    da2[ch] = da2[ch] * m[ch] * (T::one() - m[ch]);
                }
                // Through the excite weights and the relu mask.
                for k in 0..hidden {
                    let mut acc = T::zero();
                    for ch in 0..c {
                        acc = acc + da2[ch] * w2[ch * hidden + k];
                    }
                    da1[k] = if a1[k] > T::zero() { acc } else { T::zero() };
                }
                // Through the squeeze weights to the pooled vector.
                for ch in 0..c {
                    let mut acc = T::zero();
                    for k in 0..hidden {
                        acc = acc + da1[k] * w1[k * c + ch];
                    }
                    dz[ch] = acc;
                }
            });

        // Weight gradients, serial over the batch per output row.
        self.w_excite
            .grad_mut()
            .par_chunks_mut(hidden)
            .enumerate()
            .for_each(|(ch, dw)| {
                for b in 0..bsz {
                    let da2 = d_gate_pre[b * c + ch];
                    axpy(da2, &cache.hidden[b * hidden..(b + 1) * hidden], dw);
                }
            });
        self.w_squeeze
            .grad_mut()
            .par_chunks_mut(c)
            .enumerate()
            .for_each(|(k, dw)| {
                for b in 0..bsz {
                    let da1 = d_hidden[b * hidden + k];
                    axpy(da1, &cache.pooled[b * c..(b + 1) * c], dw);
                }
            });

        // Input gradient: direct gate scaling plus the pooled branch.
        let mut grad_in = Tensor::zeros(input.shape().to_vec());
        grad_in
            .data_mut()
            .par_chunks_mut(p * c)
            .enumerate()
            .for_each(|(b, dib)| {
                let gb = &g[b * p * c..(b + 1) * p * c];
                let m = &cache.gate[b * c..(b + 1) * c];
                let dz = &d_pooled[b * c..(b + 1) * c];
                for pos in 0..p {
                    for ch in 0..c {
                        dib[pos * c + ch] = gb[pos * c + ch] * m[ch] + dz[ch] * inv_p;
                    }
                }
            });
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// Shape adapters
// ---------------------------------------------------------------------------

/// `(B, F*C) -> (B, F, C)` row-major reinterpretation.
#[derive(Debug, Clone)]
pub struct Reshape {
    pub features: usize,
    pub channels: usize,
}

impl Reshape {
    fn apply<T: Real>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, d) = rank2(input, "reshape")?;
        if d != self.features * self.channels {
            return Err(Error::Dim(format!(
                "reshape: width {d} != {} x {}",
                self.features, self.channels
            )));
        }
        Ok(input.reshaped(vec![bsz, self.features, self.channels]))
    }

    fn unapply<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, f, c) = rank3(grad_out, "reshape grad")?;
        if f != self.features || c != self.channels {
            return Err(Error::Dim("reshape: gradient shape mismatch".into()));
        }
        Ok(grad_out.reshaped(vec![bsz, f * c]))
    }

    fn shape_only<T: Real>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(input)
    }
}

/// `(B, P, C) -> (B, P*C)`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cached_in_shape: (usize, usize),
}

impl Flatten {
    fn apply<T: Real>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, p, c) = rank3(input, "flatten")?;
        self.cached_in_shape = (p, c);
        Ok(input.reshaped(vec![bsz, p * c]))
    }

    fn unapply<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, d) = rank2(grad_out, "flatten grad")?;
        let (p, c) = self.cached_in_shape;
        if p * c != d {
            return Err(Error::Dim("flatten: gradient shape mismatch".into()));
        }
        Ok(grad_out.reshaped(vec![bsz, p, c]))
    }

    fn shape_only<T: Real>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (bsz, p, c) = rank3(input, "flatten")?;
        Ok(input.reshaped(vec![bsz, p * c]))
    }
}
