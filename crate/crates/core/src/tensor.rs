//! Dense row-major `f64` arrays of rank 1 to 4.
//!
//! Batches use the `N, C, H, W` layout: element `(n, c, h, w)` lives at
//! `((n * C + c) * H + h) * W + w`.

use std::fmt;

use thiserror::Error;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {0:?} has a non-positive dimension")]
    NonPositiveDim(Vec<usize>),
    #[error("rank {0} is outside 1..=4")]
    BadRank(usize),
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(TensorError::BadRank(shape.len()));
    }
    if shape.contains(&0) {
        return Err(TensorError::NonPositiveDim(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        if len != values.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected: len,
                actual: values.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: values,
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        })
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
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_values(shape, self.data)
    }

    /// Shape as `(N, C, H, W)`; errors unless rank is 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::BadRank(self.rank())),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadRank(self.rank())),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, TensorError> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: self.shape.clone(),
            right: other.shape.clone(),
        };
        let (m, k) = self.dims2().map_err(|_| mismatch())?;
        let (k2, n) = other.dims2().map_err(|_| mismatch())?;
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::new(&self.data, k, false),
            MatRef::new(&other.data, n, false),
            &mut out,
            0.0,
        );
        Self::from_values(&[m, n], out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, TensorError> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        write!(f, "{head:?}")?;
        if self.data.len() > PREVIEW {
            write!(f, " .. ({} values)", self.data.len())?;
        }
        Ok(())
    }
}

/// A row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    /// Row stride of the stored (untransposed) matrix.
    ld: usize,
    transposed: bool,
}

impl<'a> MatRef<'a> {
    pub(crate) fn new(data: &'a [f64], ld: usize, transposed: bool) -> Self {
        Self {
            data,
            ld,
            transposed,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` where `a` is `m x k`, `b` is `k x n`, `c` is `m x n`
/// row-major. Summation order is fixed, so results are reproducible.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: operand extents are checked by the asserts below against the
    // strides handed to dgemm.
    assert!(
        k == 0
            || a.data.len()
                >= if a.transposed {
                    (k - 1) * a.ld + m
                } else {
                    (m - 1) * a.ld + k
                }
    );
    assert!(
        k == 0
            || b.data.len()
                >= if b.transposed {
                    (n - 1) * b.ld + k
                } else {
                    (k - 1) * b.ld + n
                }
    );
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.at2(i, p) * b.at2(p, j);
                }
            }
        }
        Tensor::from_values(&[m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_values(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::from_values(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_values(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_values(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let expected = naive_matmul(&a, &b);
        assert_eq!(expected.data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul(&b).unwrap(), expected);
    }

    #[test]
    fn matmul_rectangular_matches_triple_loop() {
        let a = Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.37).sin()).unwrap();
        let b = Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.11).cos()).unwrap();
        let got = a.matmul(&b).unwrap();
        assert!(got.max_abs_diff(&naive_matmul(&a, &b)).unwrap() < 1e-12);
    }

    #[test]
    fn gemm_transposed_operands() {
        // a^T (3x2 stored as 2x3), b^T (2x4 stored as 4x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0];
        let mut c = vec![0.0; 12];
        gemm(
            3,
            2,
            4,
            MatRef::new(&a, 3, true),
            MatRef::new(&b, 2, true),
            &mut c,
            0.0,
        );
        let at = Tensor::from_values(&[3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        let bt =
            Tensor::from_values(&[2, 4], vec![1.0, -1.0, 0.0, 3.0, 0.5, 2.0, 1.0, -2.0]).unwrap();
        assert_eq!(c, naive_matmul(&at, &bt).into_data());
    }

    #[test]
    fn add_zeros_is_identity() {
        let x = Tensor::from_values(&[2, 2], vec![1.5, -2.0, 0.25, 8.0]).unwrap();
        let z = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(z.add(&x).unwrap(), x);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3, 2]).unwrap();
        let err = a.add(&b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[3, 2]"));
        assert!(a.matmul(&a).is_err());
        assert_eq!(
            Tensor::zeros(&[2, 0]).unwrap_err(),
            TensorError::NonPositiveDim(vec![2, 0])
        );
        assert!(Tensor::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::from_values(&[2], vec![1.0]).is_err());
    }

    #[test]
    fn inputs_unmodified() {
        let a = Tensor::from_values(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_values(&[2], vec![3.0, 4.0]).unwrap();
        let (a0, b0) = (a.clone(), b.clone());
        let _ = a.mul(&b).unwrap();
        let _ = a.sub(&b).unwrap();
        assert_eq!((a, b), (a0, b0));
    }
}
