//! Xavier (Glorot) uniform initialization.

use crate::numerics::RngStream;

use super::tensor::{Real, Tensor};

/// Half-width of the Xavier uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fills a weight tensor with `U(-b, b)`, `b = sqrt(6 / (fan_in + fan_out))`.
/// Draws happen in storage order, so a given stream always produces the same
/// initialization. Biases stay zero (callers allocate them zeroed).
pub fn xavier_fill<T: Real>(
    tensor: &mut Tensor<T>,
    fan_in: usize,
    fan_out: usize,
    stream: &mut RngStream,
) {
    let b = xavier_bound(fan_in, fan_out);
    for v in tensor.data_mut() {
        *v = T::from_f64(stream.uniform_range(-b, b));
    }
}
