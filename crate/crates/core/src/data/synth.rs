//! Deterministic real/fake image generator.
//!
//! Both classes share the same recipe for a smooth background: a 0.1 floor
//! plus three random Gaussian blobs and faint pixel noise. Fake images add
//! a fine oblique grating, the sort of periodic texture a print or a screen
//! replay leaves behind.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, Sample};
use crate::tensor::Tensor;

const NOISE_STD: f64 = 0.01;

fn blobs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let side = h.min(w) as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let sigma = rng.random_range(0.1..0.3) * side;
            let amp = rng.random_range(0.2..0.45);
            (cy, cx, sigma, amp)
        })
        .collect();
    let mut img = vec![0.1; h * w];
    for (r, row) in img.chunks_mut(w).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            for &(cy, cx, sigma, amp) in &params {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    img
}

fn add_grating(rng: &mut ChaCha8Rng, img: &mut [f64], w: usize) {
    let period_r = rng.random_range(2.0..4.0);
    let period_c = rng.random_range(2.0..4.0);
    let (phase_r, phase_c) = (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    );
    let amp = rng.random_range(0.08..0.15);
    for (r, row) in img.chunks_mut(w).enumerate() {
        let fr = (2.0 * PI * r as f64 / period_r + phase_r).cos();
        for (c, v) in row.iter_mut().enumerate() {
            let fc = (2.0 * PI * c as f64 / period_c + phase_c).cos();
            *v += amp * fr * fc;
        }
    }
}

/// `n_per_class` real images (label 0) followed by as many fakes (label 1).
pub fn synth_dataset(
    n_per_class: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<Dataset, DataError> {
    let (h, w) = size;
    if n_per_class == 0 {
        return Err(DataError::Invalid("n_per_class must be at least 1".into()));
    }
    if h < 16 || w < 16 || h % 4 != 0 || w % 4 != 0 {
        return Err(DataError::Invalid(format!(
            "synthetic size {h}x{w}: both sides must be at least 16 and divisible by 4"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for label in 0..2 {
        for _ in 0..n_per_class {
            let mut img = blobs(&mut rng, h, w);
            if label == 1 {
                add_grating(&mut rng, &mut img, w);
            }
            for v in img.iter_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            samples.push(Sample {
                image: Tensor::from_values(&[h, w], img)?,
                label,
                source_path: None,
            });
        }
    }
    let mut ds = Dataset::new(samples, vec!["real".into(), "fake".into()])?;
    ds.split_stratified(0.7, 0.15, seed);
    Ok(ds)
}
