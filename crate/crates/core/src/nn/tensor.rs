//! Dense real tensors, the currency of the autodiff engine.
//!
//! Training runs at 32 bits like any sane deep-learning stack; the whole
//! engine is generic over the scalar so the gradient-check oracles can run
//! the identical code at 64 bits.

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type the engine is generic over.
pub trait Real:
    Float + Default + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Sigmoid outputs are clamped into `[GATE_FLOOR, 1 - GATE_FLOOR]` so
    /// attention gates stay strictly inside (0, 1) even when saturated.
    const GATE_FLOOR: Self;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    const GATE_FLOOR: f32 = 1e-7;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    const GATE_FLOOR: f64 = 1e-12;
}

/// Contiguous row-major tensor with up to three axes
/// (batch, feature position, channel) and an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 3, "rank must be 1..=3");
        assert!(shape.iter().all(|&d| d > 0), "dimensions must be positive");
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![T::zero(); len])
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterprets the buffer under a new shape of equal length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Self::new(shape, self.data.clone())
    }

    /// Allocates the gradient buffer (zeroed) if not present.
    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.ensure_grad();
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        self.ensure_grad();
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Errors if any value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        // A single accumulating pass: NaN/Inf survive summation.
        let sum: T = self.data.iter().copied().sum();
        if sum.is_finite() {
            return Ok(());
        }
        Err(Error::NonFinite(context.to_string()))
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}
