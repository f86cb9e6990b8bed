//! Layers with hand-written forward and backward passes.
//!
//! Convolution is cross-correlation (no kernel flip). Every backward pass
//! is checked against central finite differences in `tests/gradcheck.rs`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{gemm, MatRef, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer configuration: {0}")]
    Config(String),
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("batch norm in training mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("{0} labels for a batch of {1}")]
    LabelCount(usize, usize),
    #[error("backward called with a cache from a different layer kind")]
    CacheMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool2d,
    FullyConnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(C_out, C_in, k, k)`
    pub weight: Tensor,
    /// `(C_out)`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self, NnError> {
        let (c_out, _, kh, kw) = weight.dims4()?;
        if kh != kw {
            return Err(NnError::Config(format!(
                "kernel must be square, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(NnError::Config(format!(
                "bias shape {:?} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(NnError::Config("stride must be at least 1".into()));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights (std = sqrt(2 / (C_in * k * k))), zero bias.
    pub fn he_init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = Tensor::from_fn(&[c_out, c_in, kernel, kernel], |_| normal.sample(rng))?;
        Self::new(weight, Tensor::zeros(&[c_out])?, stride, padding)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let k = self.kernel();
        let dim = |d: usize| {
            let span = d + 2 * self.padding;
            if span < k || !(span - k).is_multiple_of(self.stride) {
                return Err(NnError::Config(format!(
                    "input size {d} with padding {} does not tile kernel {k} at stride {}",
                    self.padding, self.stride
                )));
            }
            Ok((span - k) / self.stride + 1)
        };
        Ok((dim(h)?, dim(w)?))
    }

    fn geometry(&self, x: &Tensor) -> Result<ConvGeometry, NnError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(NnError::ChannelMismatch {
                expected: self.in_channels(),
                got: c,
            });
        }
        let (oh, ow) = self.output_size(h, w)?;
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            oh,
            ow,
            k: self.kernel(),
            stride: self.stride,
            padding: self.padding,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let g = self.geometry(x)?;
        let c_out = self.out_channels();
        let (rows, cols_len) = (g.c * g.k * g.k, g.oh * g.ow);
        let mut out = vec![0.0; g.n * c_out * cols_len];
        let mut cols = vec![0.0; rows * cols_len];
        for ni in 0..g.n {
            let sample = &x.data()[ni * g.c * g.h * g.w..][..g.c * g.h * g.w];
            let b = if self.is_pointwise() {
                sample
            } else {
                g.im2col(sample, &mut cols);
                &cols
            };
            let dst = &mut out[ni * c_out * cols_len..][..c_out * cols_len];
            for (co, row) in dst.chunks_mut(cols_len).enumerate() {
                row.fill(self.bias.data()[co]);
            }
            gemm(
                c_out,
                rows,
                cols_len,
                MatRef::new(self.weight.data(), rows, false),
                MatRef::new(b, cols_len, false),
                dst,
                1.0,
            );
        }
        Ok(Tensor::from_values(&[g.n, c_out, g.oh, g.ow], out)?)
    }

    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Conv2dGrads), NnError> {
        let g = self.geometry(x)?;
        let c_out = self.out_channels();
        let expected = [g.n, c_out, g.oh, g.ow];
        if grad_out.shape() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d backward",
                left: expected.to_vec(),
                right: grad_out.shape().to_vec(),
            }
            .into());
        }
        let (rows, cols_len) = (g.c * g.k * g.k, g.oh * g.ow);
        let mut grad_w = vec![0.0; c_out * rows];
        let mut grad_b = vec![0.0; c_out];
        let mut grad_x = vec![0.0; x.len()];
        let mut cols = vec![0.0; rows * cols_len];
        let mut dcols = vec![0.0; rows * cols_len];
        for ni in 0..g.n {
            let sample = &x.data()[ni * g.c * g.h * g.w..][..g.c * g.h * g.w];
            let go = &grad_out.data()[ni * c_out * cols_len..][..c_out * cols_len];
            for (co, row) in go.chunks(cols_len).enumerate() {
                grad_b[co] += row.iter().sum::<f64>();
            }
            let b = if self.is_pointwise() {
                sample
            } else {
                g.im2col(sample, &mut cols);
                &cols
            };
            gemm(
                c_out,
                cols_len,
                rows,
                MatRef::new(go, cols_len, false),
                MatRef::new(b, cols_len, true),
                &mut grad_w,
                1.0,
            );
            let gx = &mut grad_x[ni * g.c * g.h * g.w..][..g.c * g.h * g.w];
            if self.is_pointwise() {
                gemm(
                    rows,
                    c_out,
                    cols_len,
                    MatRef::new(self.weight.data(), rows, true),
                    MatRef::new(go, cols_len, false),
                    gx,
                    0.0,
                );
            } else {
                gemm(
                    rows,
                    c_out,
                    cols_len,
                    MatRef::new(self.weight.data(), rows, true),
                    MatRef::new(go, cols_len, false),
                    &mut dcols,
                    0.0,
                );
                g.col2im(&dcols, gx);
            }
        }
        Ok((
            Tensor::from_values(x.shape(), grad_x)?,
            Conv2dGrads {
                weight: Tensor::from_values(self.weight.shape(), grad_w)?,
                bias: Tensor::from_values(&[c_out], grad_b)?,
            },
        ))
    }
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    /// Calls `f(column_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols_len = self.oh * self.ow;
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(
                                row * cols_len + oy * self.ow + ox,
                                (c * self.h + iy as usize) * self.w + ix as usize,
                            );
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        self.for_each_tap(|ci, xi| cols[ci] = sample[xi]);
    }

    fn col2im(&self, dcols: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        self.for_each_tap(|ci, xi| grad[xi] += dcols[ci]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// What batch norm needs from its forward pass to run backward.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor,
    /// Per-channel `1 / sqrt(var + eps)` (batch var in training, running var otherwise).
    inv_std: Vec<f64>,
    training: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Result<Self, NnError> {
        Ok(Self {
            gamma: Tensor::full(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize), NnError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(NnError::ChannelMismatch {
                expected: self.channels(),
                got: c,
            });
        }
        Ok((n, c, h * w))
    }

    fn normalize(
        &self,
        x: &Tensor,
        mean: &[f64],
        inv_std: &[f64],
    ) -> Result<(Tensor, Tensor), NnError> {
        let (n, c, hw) = self.check(x)?;
        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let (g, b) = (self.gamma.data()[ci], self.beta.data()[ci]);
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    let v = (x.data()[i] - mean[ci]) * inv_std[ci];
                    x_hat[i] = v;
                    y[i] = g * v + b;
                }
            }
        }
        Ok((
            Tensor::from_values(x.shape(), y)?,
            Tensor::from_values(x.shape(), x_hat)?,
        ))
    }

    /// Inference mode: normalizes with the running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        Ok(self.normalize(x, self.running_mean.data(), &inv_std)?.0)
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, BnCache), NnError> {
        let (n, c, hw) = self.check(x)?;
        if !training {
            let inv_std: Vec<f64> = self
                .running_var
                .data()
                .iter()
                .map(|v| 1.0 / (v + self.epsilon).sqrt())
                .collect();
            let (y, x_hat) = self.normalize(x, self.running_mean.data(), &inv_std)?;
            return Ok((
                y,
                BnCache {
                    x_hat,
                    inv_std,
                    training: false,
                },
            ));
        }
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let count = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                s += x.data()[(ni * c + ci) * hw..][..hw].iter().sum::<f64>();
            }
            mean[ci] = s / count;
            let mut ss = 0.0;
            for ni in 0..n {
                ss += x.data()[(ni * c + ci) * hw..][..hw]
                    .iter()
                    .map(|v| (v - mean[ci]).powi(2))
                    .sum::<f64>();
            }
            var[ci] = ss / count;
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let (y, x_hat) = self.normalize(x, &mean, &inv_std)?;
        let m = self.momentum;
        let unbias = count / (count - 1.0);
        for ci in 0..c {
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = (1.0 - m) * *rm + m * mean[ci];
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = (1.0 - m) * *rv + m * var[ci] * unbias;
        }
        Ok((
            y,
            BnCache {
                x_hat,
                inv_std,
                training: true,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BnCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, BatchNormGrads), NnError> {
        let (n, c, hw) = self.check(grad_out)?;
        if cache.x_hat.shape() != grad_out.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm backward",
                left: cache.x_hat.shape().to_vec(),
                right: grad_out.shape().to_vec(),
            }
            .into());
        }
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let mut d_gamma = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    d_gamma[ci] += dy[i] * xh[i];
                    d_beta[ci] += dy[i];
                }
            }
        }
        let count = (n * hw) as f64;
        let mut dx = vec![0.0; grad_out.len()];
        for ni in 0..n {
            for ci in 0..c {
                let scale = self.gamma.data()[ci] * cache.inv_std[ci];
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    dx[i] = if cache.training {
                        scale * (dy[i] - d_beta[ci] / count - xh[i] * d_gamma[ci] / count)
                    } else {
                        scale * dy[i]
                    };
                }
            }
        }
        Ok((
            Tensor::from_values(grad_out.shape(), dx)?,
            BatchNormGrads {
                gamma: Tensor::from_values(&[c], d_gamma)?,
                beta: Tensor::from_values(&[c], d_beta)?,
            },
        ))
    }
}

/// `max(x, 0)`, except that NaN passes through instead of becoming 0.
pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    let mask = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok(mask.mul(grad_out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self {
            window: 2,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let dim = |d: usize| {
            if self.window == 0
                || self.stride == 0
                || d < self.window
                || !(d - self.window).is_multiple_of(self.stride)
            {
                return Err(NnError::Config(format!(
                    "pool window {} / stride {} does not divide size {d}",
                    self.window, self.stride
                )));
            }
            Ok((d - self.window) / self.stride + 1)
        };
        Ok((dim(h)?, dim(w)?))
    }

    /// Max over each window; ties go to the first element in scan order.
    /// A NaN anywhere in a window wins, so it is not silently dropped.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache), NnError> {
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = self.output_size(h, w)?;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let d = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for wy in 0..self.window {
                        for wx in 0..self.window {
                            let i = base + (oy * self.stride + wy) * w + ox * self.stride + wx;
                            if d[i] > d[best] || (d[i].is_nan() && !d[best].is_nan()) {
                                best = i;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((
            Tensor::from_values(&[n, c, oh, ow], out)?,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor, NnError> {
        if grad_out.len() != cache.argmax.len() {
            return Err(NnError::CacheMismatch);
        }
        let mut grad = Tensor::zeros(&cache.input_shape)?;
        let g = grad.data_mut();
        for (&i, &v) in cache.argmax.iter().zip(grad_out.data()) {
            g[i] += v;
        }
        Ok(grad)
    }
}

/// Fully connected layer; any input of shape `(N, ...)` is flattened to `(N, D_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(D_out, D_in)`
    pub weight: Tensor,
    /// `(D_out)`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self, NnError> {
        let (d_out, _) = weight.dims2()?;
        if bias.shape() != [d_out] {
            return Err(NnError::Config(format!(
                "bias shape {:?} does not match {d_out} outputs",
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Normal weights with std sqrt(1 / D_in), zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        let normal = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("positive std");
        let weight = Tensor::from_fn(&[d_out, d_in], |_| normal.sample(rng))?;
        Self::new(weight, Tensor::zeros(&[d_out])?)
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn batch(&self, x: &Tensor) -> Result<usize, NnError> {
        let n = x.shape()[0];
        if x.len() != n * self.in_features() {
            return Err(NnError::Config(format!(
                "fully connected layer expects {} features per sample, input shape is {:?}",
                self.in_features(),
                x.shape()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let n = self.batch(x)?;
        let (d_in, d_out) = (self.in_features(), self.out_features());
        let mut out: Vec<f64> = (0..n)
            .flat_map(|_| self.bias.data().iter().copied())
            .collect();
        gemm(
            n,
            d_in,
            d_out,
            MatRef::new(x.data(), d_in, false),
            MatRef::new(self.weight.data(), d_in, true),
            &mut out,
            1.0,
        );
        Ok(Tensor::from_values(&[n, d_out], out)?)
    }

    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
    ) -> Result<(Tensor, LinearGrads), NnError> {
        let n = self.batch(x)?;
        let (d_in, d_out) = (self.in_features(), self.out_features());
        if grad_out.shape() != [n, d_out] {
            return Err(TensorError::ShapeMismatch {
                op: "linear backward",
                left: vec![n, d_out],
                right: grad_out.shape().to_vec(),
            }
            .into());
        }
        let mut grad_w = vec![0.0; d_out * d_in];
        gemm(
            d_out,
            n,
            d_in,
            MatRef::new(grad_out.data(), d_out, true),
            MatRef::new(x.data(), d_in, false),
            &mut grad_w,
            0.0,
        );
        let mut grad_b = vec![0.0; d_out];
        for row in grad_out.data().chunks(d_out) {
            for (b, g) in grad_b.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut grad_x = vec![0.0; n * d_in];
        gemm(
            n,
            d_out,
            d_in,
            MatRef::new(grad_out.data(), d_out, false),
            MatRef::new(self.weight.data(), d_in, false),
            &mut grad_x,
            0.0,
        );
        Ok((
            Tensor::from_values(x.shape(), grad_x)?,
            LinearGrads {
                weight: Tensor::from_values(&[d_out, d_in], grad_w)?,
                bias: Tensor::from_values(&[d_out], grad_b)?,
            },
        ))
    }
}

/// Row-wise softmax of an `N x K` tensor, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_values(logits.shape(), out)?)
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, and its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(NnError::LabelCount(labels.len(), n));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::BadLabel { label, classes: k });
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (i, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[label] - max - log_sum;
        grad.data_mut()[i * k + label] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    Ok((loss * inv_n, grad.scale(inv_n)))
}

/// One layer of a network, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool2d(MaxPool2d),
    FullyConnected(Linear),
}

/// Forward-pass state a layer keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Tensor),
    BatchNorm(BnCache),
    Pool(PoolCache),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::FullyConnected(_) => LayerKind::FullyConnected,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Conv2d(conv) => conv.forward(x),
            Layer::BatchNorm(bn) => bn.infer(x),
            Layer::Relu => Ok(relu_forward(x)),
            Layer::MaxPool2d(pool) => Ok(pool.forward(x)?.0),
            Layer::FullyConnected(fc) => fc.forward(x),
        }
    }

    /// Training-mode forward. Batch norm updates its running statistics.
    pub fn forward_train(&mut self, x: Tensor) -> Result<(Tensor, LayerCache), NnError> {
        match self {
            Layer::Conv2d(conv) => Ok((conv.forward(&x)?, LayerCache::Input(x))),
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.forward(&x, true)?;
                Ok((y, LayerCache::BatchNorm(cache)))
            }
            Layer::Relu => Ok((relu_forward(&x), LayerCache::Input(x))),
            Layer::MaxPool2d(pool) => {
                let (y, cache) = pool.forward(&x)?;
                Ok((y, LayerCache::Pool(cache)))
            }
            Layer::FullyConnected(fc) => Ok((fc.forward(&x)?, LayerCache::Input(x))),
        }
    }

    /// Returns the input gradient and parameter gradients in [`Layer::params`] order.
    pub fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), NnError> {
        match (self, cache) {
            (Layer::Conv2d(conv), LayerCache::Input(x)) => {
                let (gx, g) = conv.backward(x, grad_out)?;
                Ok((gx, vec![g.weight, g.bias]))
            }
            (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                let (gx, g) = bn.backward(c, grad_out)?;
                Ok((gx, vec![g.gamma, g.beta]))
            }
            (Layer::Relu, LayerCache::Input(x)) => Ok((relu_backward(x, grad_out)?, Vec::new())),
            (Layer::MaxPool2d(pool), LayerCache::Pool(c)) => {
                Ok((pool.backward(c, grad_out)?, Vec::new()))
            }
            (Layer::FullyConnected(fc), LayerCache::Input(x)) => {
                let (gx, g) = fc.backward(x, grad_out)?;
                Ok((gx, vec![g.weight, g.bias]))
            }
            _ => Err(NnError::CacheMismatch),
        }
    }

    /// Trainable tensors.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::FullyConnected(f) => vec![&f.weight, &f.bias],
            Layer::Relu | Layer::MaxPool2d(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::FullyConnected(f) => vec![&mut f.weight, &mut f.bias],
            Layer::Relu | Layer::MaxPool2d(_) => Vec::new(),
        }
    }

    /// Every persistent tensor (parameters and running statistics), by name.
    pub fn state(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            Layer::FullyConnected(f) => vec![("weight", &f.weight), ("bias", &f.bias)],
            Layer::Relu | Layer::MaxPool2d(_) => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            Layer::FullyConnected(f) => vec![("weight", &mut f.weight), ("bias", &mut f.bias)],
            Layer::Relu | Layer::MaxPool2d(_) => Vec::new(),
        }
    }
}

/// Anything the training loop can fit: a differentiable map from a
/// `(N, C, H, W)` batch to `(N, K)` logits.
pub trait Network {
    type Tape;

    fn infer(&self, x: &Tensor) -> Result<Tensor, NnError>;

    fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Self::Tape), NnError>;

    /// Parameter gradients in [`Network::params`] order.
    fn backward(&self, tape: Self::Tape, grad_logits: &Tensor) -> Result<Vec<Tensor>, NnError>;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

/// A plain stack of layers with no skip connections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Backward pass that also returns the gradient with respect to the input.
    pub fn backward_with_input(
        &self,
        tape: Vec<LayerCache>,
        grad_logits: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let mut grad = grad_logits.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(&tape).rev() {
            let (gx, g) = layer.backward(cache, &grad)?;
            per_layer.push(g);
            grad = gx;
        }
        per_layer.reverse();
        Ok((grad, per_layer.into_iter().flatten().collect()))
    }
}

impl Network for Sequential {
    type Tape = Vec<LayerCache>;

    fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Self::Tape), NnError> {
        let mut h = x.clone();
        let mut tape = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache) = layer.forward_train(h)?;
            tape.push(cache);
            h = y;
        }
        Ok((h, tape))
    }

    fn backward(&self, tape: Self::Tape, grad_logits: &Tensor) -> Result<Vec<Tensor>, NnError> {
        Ok(self.backward_with_input(tape, grad_logits)?.1)
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}
