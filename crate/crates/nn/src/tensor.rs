//! Row-major dense `f64` tensors and the handful of matrix kernels the tape
//! needs.
//!
//! Every kernel sums in a fixed index order so results are bit-reproducible
//! for identical inputs. No kernel reorders a reduction based on data or
//! thread count.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![value] }
    }

    /// A `1 × n` row.
    pub fn row(values: &[f64]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec() }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Gaussian entries with standard deviation `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent for 2-D tensors; 1 for vectors and scalars.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing extent.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(NnError::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &other.data, m, k, n, &mut out);
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        transpose_into(&self.data, r, c, &mut out);
        Tensor { shape: vec![c, r], data: out }
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Each output element accumulates its `k` products in ascending `p`
/// order, starting from its previous value; blocking only changes which
/// elements are in flight together.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    dispatch(m, k, n, |i, p| a[i * k + p], b, out);
}

/// `out += aᵀ · b` for row-major `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    dispatch(m, k, n, |i, p| a[p * m + i], b, out);
}

/// Picks a register-block shape for the host. The AVX2 build is the same
/// code with wider vectors; Rust never fuses multiply-add on its own, so
/// both paths round identically.
#[inline(always)]
fn dispatch(m: usize, k: usize, n: usize, a_at: impl Fn(usize, usize) -> f64, b: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { blocked_avx2(m, k, n, a_at, b, out) };
        return;
    }
    blocked::<4, 4>(m, k, n, a_at, b, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn blocked_avx2(m: usize, k: usize, n: usize, a_at: impl Fn(usize, usize) -> f64, b: &[f64], out: &mut [f64]) {
    blocked::<4, 8>(m, k, n, a_at, b, out);
}

/// `MR × NR` output blocks accumulate in registers over the whole `k`
/// range.
#[inline(always)]
fn blocked<const MR: usize, const NR: usize>(m: usize, k: usize, n: usize, a_at: impl Fn(usize, usize) -> f64, b: &[f64], out: &mut [f64]) {
    let full_cols = n - n % NR;
    let mut pack = vec![0.0; k * MR];
    let mut i0 = 0;
    while i0 + MR <= m {
        for p in 0..k {
            for r in 0..MR {
                pack[p * MR + r] = a_at(i0 + r, p);
            }
        }
        for j0 in (0..full_cols).step_by(NR) {
            let mut acc = [[0.0; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                let o = (i0 + r) * n + j0;
                row.copy_from_slice(&out[o..o + NR]);
            }
            for (ap, brow) in pack.chunks_exact(MR).zip(b.chunks_exact(n)) {
                let ap: &[f64; MR] = ap.try_into().unwrap();
                let bp: &[f64; NR] = brow[j0..j0 + NR].try_into().unwrap();
                for r in 0..MR {
                    for c in 0..NR {
                        acc[r][c] += ap[r] * bp[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let o = (i0 + r) * n + j0;
                out[o..o + NR].copy_from_slice(row);
            }
        }
        for r in 0..MR {
            for c in full_cols..n {
                let mut s = out[(i0 + r) * n + c];
                for p in 0..k {
                    s += pack[p * MR + r] * b[p * n + c];
                }
                out[(i0 + r) * n + c] = s;
            }
        }
        i0 += MR;
    }
    for i in i0..m {
        for c in 0..n {
            let mut s = out[i * n + c];
            for p in 0..k {
                s += a_at(i, p) * b[p * n + c];
            }
            out[i * n + c] = s;
        }
    }
}

/// `out += a · bᵀ` for row-major `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let mut bt = vec![0.0; k * n];
    transpose_into(b, n, k, &mut bt);
    gemm(a, &bt, m, k, n, out);
}

pub(crate) fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
