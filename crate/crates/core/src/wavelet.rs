//! Single-level separable 2D discrete wavelet transform.
//!
//! The transform is a two-channel filter bank with periodic boundary
//! extension. The 1/sqrt(2) normalization lives in the filter taps, so the
//! Haar bank is orthonormal and its round trip is exact up to rounding.
//!
//! Odd image dimensions are padded by repeating the last row/column before
//! the transform; [`Subbands::source_shape`] remembers the original size so
//! [`idwt2d`] can crop it back.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("signal length {0} must be even and at least 2")]
    BadSignalLength(usize),
    #[error("coefficient length mismatch: approx {approx}, detail {detail}")]
    CoefficientMismatch { approx: usize, detail: usize },
    #[error("image {h}x{w} is too small; both dimensions must be at least 2")]
    DegenerateImage { h: usize, w: usize },
    #[error("subbands have inconsistent shapes")]
    InconsistentSubbands,
    #[error("unknown wavelet filter `{0}` (expected haar or bior2.2)")]
    UnknownFilter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One FIR filter. Coefficient `k` of the filter output touches samples
/// `2k + offset + j` for each tap `j`, wrapped periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub taps: Vec<f64>,
    pub offset: isize,
}

impl Filter {
    fn new(taps: Vec<f64>, offset: isize) -> Self {
        Self { taps, offset }
    }

    fn position(&self, k: usize, j: usize, n: usize) -> usize {
        (2 * k as isize + self.offset + j as isize).rem_euclid(n as isize) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterKind {
    #[default]
    Haar,
    Bior22,
}

impl FilterKind {
    pub fn filters(self) -> FilterPair {
        match self {
            FilterKind::Haar => FilterPair::haar(),
            FilterKind::Bior22 => FilterPair::bior22(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Haar => "haar",
            FilterKind::Bior22 => "bior2.2",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = WaveletError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(FilterKind::Haar),
            "bior2.2" | "bior22" => Ok(FilterKind::Bior22),
            _ => Err(WaveletError::UnknownFilter(s.to_string())),
        }
    }
}

/// Analysis (scaling / wavelet) and synthesis filters for one family.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub name: &'static str,
    pub analysis_low: Filter,
    pub analysis_high: Filter,
    pub synthesis_low: Filter,
    pub synthesis_high: Filter,
}

impl FilterPair {
    pub fn haar() -> Self {
        let low = Filter::new(vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2], 0);
        let high = Filter::new(vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 0);
        Self {
            name: "haar",
            analysis_low: low.clone(),
            analysis_high: high.clone(),
            synthesis_low: low,
            synthesis_high: high,
        }
    }

    /// CDF 5/3 biorthogonal pair, normalized so the low-pass DC gain is sqrt(2).
    pub fn bior22() -> Self {
        let s = std::f64::consts::SQRT_2;
        let r = FRAC_1_SQRT_2;
        Self {
            name: "bior2.2",
            analysis_low: Filter::new(
                vec![-s / 8.0, s / 4.0, 3.0 * s / 4.0, s / 4.0, -s / 8.0],
                -2,
            ),
            analysis_high: Filter::new(vec![-r / 2.0, r, -r / 2.0], 0),
            synthesis_low: Filter::new(vec![r / 2.0, r, r / 2.0], -1),
            synthesis_high: Filter::new(
                vec![-s / 8.0, -s / 4.0, 3.0 * s / 4.0, -s / 4.0, -s / 8.0],
                -1,
            ),
        }
    }
}

fn analyze(signal: &[f64], filter: &Filter, out: &mut [f64]) {
    let n = signal.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = filter
            .taps
            .iter()
            .enumerate()
            .map(|(j, t)| t * signal[filter.position(k, j, n)])
            .sum();
    }
}

fn synthesize(coeffs: &[f64], filter: &Filter, out: &mut [f64]) {
    let n = out.len();
    for (k, c) in coeffs.iter().enumerate() {
        for (j, t) in filter.taps.iter().enumerate() {
            out[filter.position(k, j, n)] += t * c;
        }
    }
}

fn dwt1d_slice(signal: &[f64], filters: &FilterPair, approx: &mut [f64], detail: &mut [f64]) {
    analyze(signal, &filters.analysis_low, approx);
    analyze(signal, &filters.analysis_high, detail);
}

fn idwt1d_slice(approx: &[f64], detail: &[f64], filters: &FilterPair, out: &mut [f64]) {
    out.fill(0.0);
    synthesize(approx, &filters.synthesis_low, out);
    synthesize(detail, &filters.synthesis_high, out);
}

/// Splits an even-length signal into approximation and detail coefficients.
pub fn dwt1d(signal: &Tensor, filters: &FilterPair) -> Result<(Tensor, Tensor), WaveletError> {
    let n = signal.len();
    if signal.rank() != 1 || n < 2 || !n.is_multiple_of(2) {
        return Err(WaveletError::BadSignalLength(n));
    }
    let mut approx = vec![0.0; n / 2];
    let mut detail = vec![0.0; n / 2];
    dwt1d_slice(signal.data(), filters, &mut approx, &mut detail);
    Ok((
        Tensor::from_values(&[n / 2], approx)?,
        Tensor::from_values(&[n / 2], detail)?,
    ))
}

pub fn idwt1d(
    approx: &Tensor,
    detail: &Tensor,
    filters: &FilterPair,
) -> Result<Tensor, WaveletError> {
    if approx.rank() != 1 || approx.shape() != detail.shape() {
        return Err(WaveletError::CoefficientMismatch {
            approx: approx.len(),
            detail: detail.len(),
        });
    }
    let mut out = vec![0.0; 2 * approx.len()];
    idwt1d_slice(approx.data(), detail.data(), filters, &mut out);
    Ok(Tensor::from_values(&[out.len()], out)?)
}

/// The four level-1 subbands. The first letter names the filter applied
/// along rows (horizontal), the second the filter applied along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    /// `(H, W)` of the image before any odd-size padding.
    pub source_shape: (usize, usize),
}

impl Subbands {
    pub fn bands(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("ll", &self.ll),
            ("lh", &self.lh),
            ("hl", &self.hl),
            ("hh", &self.hh),
        ]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|(_, b)| b.sum_squares()).sum()
    }
}

/// Repeats the last row and/or column so both dimensions are even.
fn pad_to_even(data: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return (data.to_vec(), h, w);
    }
    let mut out = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        let src = &data[r.min(h - 1) * w..][..w];
        out.extend_from_slice(src);
        if pw > w {
            out.push(src[w - 1]);
        }
    }
    (out, ph, pw)
}

pub fn dwt2d(image: &Tensor, filters: &FilterPair) -> Result<Subbands, WaveletError> {
    let (h, w) = image.dims2()?;
    if h < 2 || w < 2 {
        return Err(WaveletError::DegenerateImage { h, w });
    }
    let (data, ph, pw) = pad_to_even(image.data(), h, w);
    let (oh, ow) = (ph / 2, pw / 2);

    // rows: low half and high half, each ph x ow
    let mut row_lo = vec![0.0; ph * ow];
    let mut row_hi = vec![0.0; ph * ow];
    for r in 0..ph {
        dwt1d_slice(
            &data[r * pw..][..pw],
            filters,
            &mut row_lo[r * ow..][..ow],
            &mut row_hi[r * ow..][..ow],
        );
    }

    let columns = |src: &[f64]| {
        let mut lo = vec![0.0; oh * ow];
        let mut hi = vec![0.0; oh * ow];
        let mut col = vec![0.0; ph];
        let (mut a, mut d) = (vec![0.0; oh], vec![0.0; oh]);
        for c in 0..ow {
            for r in 0..ph {
                col[r] = src[r * ow + c];
            }
            dwt1d_slice(&col, filters, &mut a, &mut d);
            for r in 0..oh {
                lo[r * ow + c] = a[r];
                hi[r * ow + c] = d[r];
            }
        }
        (lo, hi)
    };
    let (ll, lh) = columns(&row_lo);
    let (hl, hh) = columns(&row_hi);
    let shape = [oh, ow];
    Ok(Subbands {
        ll: Tensor::from_values(&shape, ll)?,
        lh: Tensor::from_values(&shape, lh)?,
        hl: Tensor::from_values(&shape, hl)?,
        hh: Tensor::from_values(&shape, hh)?,
        source_shape: (h, w),
    })
}

pub fn idwt2d(sub: &Subbands, filters: &FilterPair) -> Result<Tensor, WaveletError> {
    let (oh, ow) = sub.ll.dims2()?;
    if [&sub.lh, &sub.hl, &sub.hh]
        .iter()
        .any(|b| b.shape() != sub.ll.shape())
    {
        return Err(WaveletError::InconsistentSubbands);
    }
    let (h, w) = sub.source_shape;
    let (ph, pw) = (2 * oh, 2 * ow);
    if h + h % 2 != ph || w + w % 2 != pw {
        return Err(WaveletError::InconsistentSubbands);
    }

    let columns = |lo: &Tensor, hi: &Tensor| {
        let mut out = vec![0.0; ph * ow];
        let (mut a, mut d) = (vec![0.0; oh], vec![0.0; oh]);
        let mut col = vec![0.0; ph];
        for c in 0..ow {
            for r in 0..oh {
                a[r] = lo.data()[r * ow + c];
                d[r] = hi.data()[r * ow + c];
            }
            idwt1d_slice(&a, &d, filters, &mut col);
            for r in 0..ph {
                out[r * ow + c] = col[r];
            }
        }
        out
    };
    let row_lo = columns(&sub.ll, &sub.lh);
    let row_hi = columns(&sub.hl, &sub.hh);

    let mut padded = vec![0.0; ph * pw];
    for r in 0..ph {
        idwt1d_slice(
            &row_lo[r * ow..][..ow],
            &row_hi[r * ow..][..ow],
            filters,
            &mut padded[r * pw..][..pw],
        );
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&padded[r * pw..][..w]);
    }
    Ok(Tensor::from_values(&[h, w], out)?)
}

/// How a grayscale image is turned into the classifier's input tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// `[LL, LH, HL, HH]` as four channels at half resolution.
    #[default]
    StackedSubbands,
    /// LL only, one channel at half resolution.
    ApproxOnly,
    /// The image itself, no transform. Used as the no-DWT baseline.
    Raw,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::StackedSubbands => "stacked",
            FeatureMode::ApproxOnly => "approx",
            FeatureMode::Raw => "raw",
        }
    }

    /// Feature tensor shape `(C, H, W)` for an image of size `(h, w)`.
    pub fn feature_shape(self, h: usize, w: usize) -> (usize, usize, usize) {
        match self {
            FeatureMode::StackedSubbands => (4, h.div_ceil(2), w.div_ceil(2)),
            FeatureMode::ApproxOnly => (1, h.div_ceil(2), w.div_ceil(2)),
            FeatureMode::Raw => (1, h, w),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stacked" | "stacked_subbands" => Ok(FeatureMode::StackedSubbands),
            "approx" | "approx_only" => Ok(FeatureMode::ApproxOnly),
            "raw" => Ok(FeatureMode::Raw),
            _ => Err(format!(
                "unknown feature mode `{s}` (expected stacked, approx or raw)"
            )),
        }
    }
}

/// Rank-3 `(C, H, W)` classifier input for one grayscale image.
pub fn extract_features(
    image: &Tensor,
    filters: &FilterPair,
    mode: FeatureMode,
) -> Result<Tensor, WaveletError> {
    if mode == FeatureMode::Raw {
        let (h, w) = image.dims2()?;
        return Ok(image.clone().reshape(&[1, h, w])?);
    }
    let sub = dwt2d(image, filters)?;
    let (oh, ow) = sub.ll.dims2()?;
    match mode {
        FeatureMode::ApproxOnly => Ok(sub.ll.reshape(&[1, oh, ow])?),
        _ => {
            let mut data = Vec::with_capacity(4 * oh * ow);
            for (_, band) in sub.bands() {
                data.extend_from_slice(band.data());
            }
            Ok(Tensor::from_values(&[4, oh, ow], data)?)
        }
    }
}
