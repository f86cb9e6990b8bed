//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wpad::model::{ModelConfig, SkipMode};
use wpad::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
}

/// Uniform in `[-1, 1]` but at least `gap` away from zero, so ReLU kinks
/// stay out of reach of the finite-difference step.
pub fn away_from_zero(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
    .unwrap()
}

/// Gradients whose norm is below this are compared in absolute terms. A
/// conv bias feeding batch norm has an exact gradient of zero, which
/// central differences only reproduce up to about 1e-10.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

/// `||a - b|| / max(||a||, ||b||, GRAD_NORM_FLOOR)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(GRAD_NORM_FLOOR)
}

/// Central differences of `f` with respect to every entry of `t`.
pub fn numeric_grad(t: &mut Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + FD_STEP;
            let up = f(t);
            t.data_mut()[i] = orig - FD_STEP;
            let down = f(t);
            t.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `sum(y * weights)`, a scalar loss whose gradient in `y` is `weights`.
pub fn project(y: &Tensor, weights: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// A 3-block model small enough for finite differences.
pub fn toy_config(input_shape: (usize, usize, usize), skip_mode: SkipMode) -> ModelConfig {
    ModelConfig {
        input_shape,
        num_classes: 2,
        block_convs: vec![2, 2, 2],
        channels: vec![3, 4, 4],
        skip_mode,
        stem: true,
        maxpool_after: vec![1, 2],
        kernel_size: 3,
        reference_layout: false,
    }
}
