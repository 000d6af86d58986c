//! Parameter initialization.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Xavier (Glorot) uniform initialization for a 2-D weight:
/// samples from `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let (fan_in, fan_out) = shape;
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "xavier init needs positive dims, got ({fan_in}, {fan_out})"
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data)
}
