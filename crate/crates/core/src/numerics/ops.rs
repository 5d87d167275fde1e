//! Dense fp32 kernels.
//!
//! The inner loops are written so LLVM can vectorise them; on x86-64 hosts
//! with AVX2 or AVX-512 the same loops are recompiled for the wider instruction
//! set and picked at runtime. Summation order never depends on the dispatch, so results
//! are bitwise identical either way.

use crate::error::{Error, Result};

use super::tensor::{Matrix, Real};

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[inline(always)]
fn gemm_nn_body<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[inline(always)]
fn gemm_tn_body<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    // out[k x n] += a[m x k]^T * b[m x n]
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_nn_avx2<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_nn_body(m, k, n, a, b, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_tn_avx2<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_tn_body(m, k, n, a, b, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_nn_avx512<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_nn_body(m, k, n, a, b, out)
}

fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F.
        unsafe { gemm_nn_avx512(m, k, n, a, b, out) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { gemm_nn_avx2(m, k, n, a, b, out) };
        return;
    }
    gemm_nn_body(m, k, n, a, b, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_tn_avx512<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    gemm_tn_body(m, k, n, a, b, out)
}

fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F.
        unsafe { gemm_tn_avx512(m, k, n, a, b, out) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { gemm_tn_avx2(m, k, n, a, b, out) };
        return;
    }
    gemm_tn_body(m, k, n, a, b, out)
}

/// `a * b` with fp accumulation in the element type.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    gemm_nn(
        a.rows(),
        a.cols(),
        b.cols(),
        a.data(),
        b.data(),
        out.data_mut(),
    );
    Ok(out)
}

/// fp32 matrix product, the reference path the int8 kernel is measured against.
pub fn matmul_f32(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<Matrix<f32>> {
    matmul(a, b)
}

/// `a^T * b`
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul_tn {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.cols(), b.cols());
    gemm_tn(
        a.rows(),
        a.cols(),
        b.cols(),
        a.data(),
        b.data(),
        out.data_mut(),
    );
    Ok(out)
}

/// `a * b^T`
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "matmul_nt {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    matmul(a, &b.transpose())
}

/// `x * w + bias` for a `1 x out` bias row.
pub fn linear<T: Real>(x: &Matrix<T>, w: &Matrix<T>, bias: &Matrix<T>) -> Result<Matrix<T>> {
    let mut y = matmul(x, w)?;
    y.add_row_broadcast(bias)?;
    Ok(y)
}

#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    // Adding 1.5 * 2^23 rounds to an integer held in the low mantissa bits.
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let t = x * LOG2E + ROUND;
    let n = t - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0 / 5040.0;
    let p = p * r + 1.0 / 720.0;
    let p = p * r + 1.0 / 120.0;
    let p = p * r + 1.0 / 24.0;
    let p = p * r + 1.0 / 6.0;
    let p = p * r + 0.5;
    let p = p * r * r + r + 1.0;
    p * f32::from_bits(t.to_bits().wrapping_add(127) << 23)
}

#[inline(always)]
fn exp_f32_body(values: &mut [f32]) {
    for v in values {
        *v = exp_f32(*v);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn exp_f32_avx2(values: &mut [f32]) {
    exp_f32_body(values)
}

/// Vectorisable `exp` for fp32, within a few ulp of the libm result over
/// the finite range and saturating outside `[-87, 88]`.
pub fn exp_f32_slice(values: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { exp_f32_avx2(values) };
        return;
    }
    exp_f32_body(values)
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    for v in row.iter_mut() {
        *v -= max;
    }
    T::exp_in_place(row);
    let mut lanes = [T::zero(); 8];
    for chunk in row.chunks(8) {
        for (l, &v) in lanes.iter_mut().zip(chunk) {
            *l += v;
        }
    }
    let sum = lanes.iter().fold(T::zero(), |a, &b| a + b);
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm_cached<T: Real>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let cols = x.cols();
    if gamma.len() != cols || beta.len() != cols {
        return Err(Error::Shape(format!(
            "layer norm over {cols} columns with gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let n = T::of(cols as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut normalized = Matrix::zeros(x.rows(), cols);
    let mut out = Matrix::zeros(x.rows(), cols);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let xn = normalized.row_mut(r);
        for (d, &v) in xn.iter_mut().zip(row) {
            *d = (v - mean) * istd;
        }
        let xn = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = xn[c] * gamma.data()[c] + beta.data()[c];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Row-wise layer normalisation with population variance.
pub fn layer_norm<T: Real>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
) -> Result<Matrix<T>> {
    layer_norm_cached(x, gamma, beta).map(|(y, _)| y)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Real>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

/// d/dx of `x * Phi(x)`.
#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    normal_cdf(x) + x * pdf
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}
