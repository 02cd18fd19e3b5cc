//! Weight initializers.

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform in `±1/√fan_in`.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = crate::tensor::numel(shape);
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-b..b)).collect() }
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = crate::tensor::numel(shape);
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect() }
}
