//! int8 quantization and the dynamically quantized linear kernel.
//!
//! Weights use a per-tensor symmetric scheme (`zero_point == 0`, values in
//! `[-127, 127]`). Activations are quantized on every call from their observed
//! range with an affine scheme over the full `[-128, 127]` range. Rounding is
//! half away from zero.

use crate::error::{Error, Result};

use super::tensor::Tensor2D;

/// int8 matrix with a single scale and zero point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    q: Vec<i8>,
    scale: f32,
    zero_point: i32,
}

impl QuantizedTensor {
    pub fn new(rows: usize, cols: usize, q: Vec<i8>, scale: f32, zero_point: i32) -> Result<Self> {
        if q.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} int8 values cannot fill a {rows}x{cols} tensor",
                q.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Input(format!(
                "quantization scale must be positive, got {scale}"
            )));
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(Error::Input(format!(
                "zero point {zero_point} outside int8 range"
            )));
        }
        Ok(Self {
            rows,
            cols,
            q,
            scale,
            zero_point,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[i8] {
        &self.q
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }

    pub fn is_symmetric(&self) -> bool {
        self.zero_point == 0 && self.q.iter().all(|&v| v != i8::MIN)
    }

    /// `scale * (q - zero_point)` for every element.
    pub fn dequantize(&self) -> Tensor2D {
        let data = self
            .q
            .iter()
            .map(|&v| self.scale * (v as i32 - self.zero_point) as f32)
            .collect();
        Tensor2D::new(self.rows, self.cols, data).expect("shape checked at construction")
    }
}

/// Per-tensor symmetric weight quantization. An all-zero tensor gets scale 1.
pub fn quantize_weights_symmetric(w: &Tensor2D) -> QuantizedTensor {
    let max_abs = w.max_abs();
    let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
    let q = w
        .data()
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedTensor {
        rows: w.rows(),
        cols: w.cols(),
        q,
        scale,
        zero_point: 0,
    }
}

/// Affine parameters `(scale, zero_point)` covering `[min, max]` widened to include 0.
fn affine_params(min: f32, max: f32) -> (f32, i32) {
    let lo = min.min(0.0);
    let hi = max.max(0.0);
    let range = hi - lo;
    let scale = if range > 0.0 { range / 255.0 } else { 1.0 };
    let zero_point = ((-lo / scale).round() as i32 - 128).clamp(-128, 127);
    (scale, zero_point)
}

/// Dynamic affine quantization of an activation tensor from its observed range.
pub fn quantize_activations_dynamic(x: &Tensor2D) -> QuantizedTensor {
    let (min, max) = x
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (min, max) = if x.is_empty() { (0.0, 0.0) } else { (min, max) };
    let (scale, zero_point) = affine_params(min, max);
    let q = x
        .data()
        .iter()
        .map(|&v| ((v / scale).round() as i32 + zero_point).clamp(-128, 127) as i8)
        .collect();
    QuantizedTensor {
        rows: x.rows(),
        cols: x.cols(),
        q,
        scale,
        zero_point,
    }
}

/// Inner dimensions are zero-padded to a multiple of this many bytes.
const K_ALIGN: usize = 64;

/// A symmetric weight matrix laid out for the int8 kernel: transposed so every
/// output column is a contiguous, zero-padded run of input weights, with
/// per-column sums precomputed for the activation zero-point correction.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedInt8Weights {
    in_dim: usize,
    out_dim: usize,
    stride: usize,
    transposed: Vec<i8>,
    col_sums: Vec<i32>,
    scale: f32,
}

/// Largest inner dimension for which the 32-bit accumulator cannot overflow.
pub const MAX_INNER_DIM: usize = 1 << 16;

impl PackedInt8Weights {
    pub fn pack(w: &QuantizedTensor) -> Result<Self> {
        if w.zero_point != 0 {
            return Err(Error::Input(
                "int8 linear kernel needs symmetric weights (zero point 0)".into(),
            ));
        }
        if w.rows > MAX_INNER_DIM {
            return Err(Error::Shape(format!(
                "inner dimension {} exceeds the int32 accumulator bound {MAX_INNER_DIM}",
                w.rows
            )));
        }
        let (in_dim, out_dim) = (w.rows, w.cols);
        let stride = in_dim.div_ceil(K_ALIGN) * K_ALIGN;
        let mut transposed = vec![0i8; stride * out_dim];
        let mut col_sums = vec![0i32; out_dim];
        for k in 0..in_dim {
            for j in 0..out_dim {
                let v = w.q[k * out_dim + j];
                transposed[j * stride + k] = v;
                col_sums[j] += v as i32;
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            stride,
            transposed,
            col_sums,
            scale: w.scale,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Quantizes `x` dynamically, multiplies in int8 with int32 accumulation,
    /// then dequantizes and adds the fp32 bias.
    pub fn forward(&self, x: &Tensor2D, bias: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "int8 linear expects {} input features, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        if bias.rows() != 1 || bias.cols() != self.out_dim {
            return Err(Error::Shape(format!(
                "bias {}x{} for {} outputs",
                bias.rows(),
                bias.cols(),
                self.out_dim
            )));
        }
        let xq = quantize_activations_dynamic(x);
        let m = x.rows();
        let mut padded = vec![0i8; m * self.stride];
        for (dst, src) in padded
            .chunks_exact_mut(self.stride)
            .zip(xq.q.chunks_exact(self.in_dim.max(1)))
        {
            dst[..self.in_dim].copy_from_slice(src);
        }
        let mut acc = vec![0i32; m * self.out_dim];
        kernel::gemm(
            m,
            self.stride,
            self.out_dim,
            &padded,
            &self.transposed,
            &self.col_sums,
            &mut acc,
        );

        let out_scale = xq.scale * self.scale;
        let zx = xq.zero_point;
        let bias = bias.data();
        let mut out = Vec::with_capacity(acc.len());
        for row in acc.chunks_exact(self.out_dim.max(1)) {
            for ((&a, &cs), &b) in row.iter().zip(&self.col_sums).zip(bias) {
                out.push(out_scale * (a - zx * cs) as f32 + b);
            }
        }
        Tensor2D::new(m, self.out_dim, out)
    }
}

/// int8 x int8 -> int32 products `acc[i][j] = sum_k x[i][k] * wt[j][k]`.
///
/// `k` is a multiple of [`K_ALIGN`]. Integer accumulation makes every tier
/// produce identical results.
mod kernel {
    #[cfg(target_arch = "x86_64")]
    use std::arch::x86_64::*;

    #[inline(always)]
    pub(super) fn dot_scalar(a: &[i8], b: &[i8]) -> i32 {
        a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
    }

    fn gemm_scalar(m: usize, k: usize, n: usize, x: &[i8], wt: &[i8], acc: &mut [i32]) {
        for i in 0..m {
            let xr = &x[i * k..(i + 1) * k];
            for j in 0..n {
                acc[i * n + j] = dot_scalar(xr, &wt[j * k..(j + 1) * k]);
            }
        }
    }

    /// Sign-extends to i16 and uses `vpmaddwd`, 16 products per instruction.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn gemm_avx2(m: usize, k: usize, n: usize, x: &[i8], wt: &[i8], acc: &mut [i32]) {
        #[inline(always)]
        unsafe fn hsum(v: __m256i) -> i32 {
            let lo = _mm256_castsi256_si128(v);
            let hi = _mm256_extracti128_si256(v, 1);
            let s = _mm_add_epi32(lo, hi);
            let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b01_00_11_10));
            let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
            _mm_cvtsi128_si32(s)
        }
        let xp = x.as_ptr();
        let wp = wt.as_ptr();
        for i in 0..m {
            let xr = xp.add(i * k);
            let mut j = 0;
            while j + 4 <= n {
                let (mut a0, mut a1, mut a2, mut a3) = (
                    _mm256_setzero_si256(),
                    _mm256_setzero_si256(),
                    _mm256_setzero_si256(),
                    _mm256_setzero_si256(),
                );
                let mut p = 0;
                while p < k {
                    let xv = _mm256_cvtepi8_epi16(_mm_loadu_si128(xr.add(p) as *const __m128i));
                    let w0 =
                        _mm256_cvtepi8_epi16(_mm_loadu_si128(wp.add(j * k + p) as *const __m128i));
                    let w1 = _mm256_cvtepi8_epi16(_mm_loadu_si128(
                        wp.add((j + 1) * k + p) as *const __m128i
                    ));
                    let w2 = _mm256_cvtepi8_epi16(_mm_loadu_si128(
                        wp.add((j + 2) * k + p) as *const __m128i
                    ));
                    let w3 = _mm256_cvtepi8_epi16(_mm_loadu_si128(
                        wp.add((j + 3) * k + p) as *const __m128i
                    ));
                    a0 = _mm256_add_epi32(a0, _mm256_madd_epi16(xv, w0));
                    a1 = _mm256_add_epi32(a1, _mm256_madd_epi16(xv, w1));
                    a2 = _mm256_add_epi32(a2, _mm256_madd_epi16(xv, w2));
                    a3 = _mm256_add_epi32(a3, _mm256_madd_epi16(xv, w3));
                    p += 16;
                }
                let out = acc.as_mut_ptr().add(i * n + j);
                *out = hsum(a0);
                *out.add(1) = hsum(a1);
                *out.add(2) = hsum(a2);
                *out.add(3) = hsum(a3);
                j += 4;
            }
            while j < n {
                let mut a0 = _mm256_setzero_si256();
                let mut p = 0;
                while p < k {
                    let xv = _mm256_cvtepi8_epi16(_mm_loadu_si128(xr.add(p) as *const __m128i));
                    let w0 =
                        _mm256_cvtepi8_epi16(_mm_loadu_si128(wp.add(j * k + p) as *const __m128i));
                    a0 = _mm256_add_epi32(a0, _mm256_madd_epi16(xv, w0));
                    p += 16;
                }
                acc[i * n + j] = hsum(a0);
                j += 1;
            }
        }
    }

    /// `vpdpbusd` on unsigned-shifted activations, 64 products per instruction.
    /// The +128 shift is removed with the weight column sums.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx512bw,avx512vnni")]
    unsafe fn gemm_vnni(
        m: usize,
        k: usize,
        n: usize,
        x: &[i8],
        wt: &[i8],
        col_sums: &[i32],
        acc: &mut [i32],
    ) {
        let flip = _mm512_set1_epi8(i8::MIN);
        let wp = wt.as_ptr();
        let mut xu = vec![0i8; k];
        for i in 0..m {
            // i8 -> u8 by flipping the sign bit: u = x + 128
            let xr = x.as_ptr().add(i * k);
            let mut p = 0;
            while p < k {
                let v = _mm512_loadu_si512(xr.add(p) as *const __m512i);
                _mm512_storeu_si512(
                    xu.as_mut_ptr().add(p) as *mut __m512i,
                    _mm512_xor_si512(v, flip),
                );
                p += 64;
            }
            let xp = xu.as_ptr();
            let mut j = 0;
            while j < n {
                let cols = (n - j).min(4);
                let mut sums = [_mm512_setzero_si512(); 4];
                let mut p = 0;
                while p < k {
                    let xv = _mm512_loadu_si512(xp.add(p) as *const __m512i);
                    for (c, s) in sums.iter_mut().enumerate().take(cols) {
                        let wv = _mm512_loadu_si512(wp.add((j + c) * k + p) as *const __m512i);
                        *s = _mm512_dpbusd_epi32(*s, xv, wv);
                    }
                    p += 64;
                }
                for (c, s) in sums.iter().enumerate().take(cols) {
                    acc[i * n + j + c] = _mm512_reduce_add_epi32(*s) - 128 * col_sums[j + c];
                }
                j += cols;
            }
        }
    }

    pub(super) fn gemm(
        m: usize,
        k: usize,
        n: usize,
        x: &[i8],
        wt: &[i8],
        col_sums: &[i32],
        acc: &mut [i32],
    ) {
        debug_assert_eq!(k % super::K_ALIGN, 0);
        debug_assert!(x.len() >= m * k && wt.len() >= n * k && acc.len() >= m * n);
        #[cfg(target_arch = "x86_64")]
        {
            if super::vnni_available() {
                // SAFETY: features checked; k is a multiple of 64 and slices are in bounds.
                unsafe { gemm_vnni(m, k, n, x, wt, col_sums, acc) };
                return;
            }
            if is_x86_feature_detected!("avx2") {
                // SAFETY: as above, k is a multiple of 16.
                unsafe { gemm_avx2(m, k, n, x, wt, acc) };
                return;
            }
        }
        gemm_scalar(m, k, n, x, wt, acc)
    }
}

#[cfg(target_arch = "x86_64")]
fn vnni_available() -> bool {
    is_x86_feature_detected!("avx512f")
        && is_x86_feature_detected!("avx512bw")
        && is_x86_feature_detected!("avx512vnni")
}

/// `x * dequant(wq) + bias` executed in int8 with a dynamically quantized `x`.
///
/// `wq` must come from [`quantize_weights_symmetric`]. Callers that run the
/// same weights repeatedly should keep a [`PackedInt8Weights`] instead.
pub fn quantized_linear(wq: &QuantizedTensor, x: &Tensor2D, bias: &Tensor2D) -> Result<Tensor2D> {
    PackedInt8Weights::pack(wq)?.forward(x, bias)
}

/// Returns whether the int8 kernel has a wide-vector path on this host.
pub fn int8_accelerated() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        vnni_available() || is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matmul_f32;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
        Tensor2D::from_fn(rows, cols, |_, _| rng.sample::<f32, _>(StandardNormal))
    }

    #[test]
    fn symmetric_direct_formula() {
        let w = Tensor2D::new(1, 2, vec![0.0, 127.0]).unwrap();
        let q = quantize_weights_symmetric(&w);
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.values(), &[0, 127]);
        assert_eq!(q.zero_point(), 0);

        let w = Tensor2D::new(1, 2, vec![-1.0, 1.0]).unwrap();
        let q = quantize_weights_symmetric(&w);
        assert_eq!(q.scale(), 1.0 / 127.0);
        assert_eq!(q.values(), &[-127, 127]);
    }

    #[test]
    fn symmetric_all_zero_has_unit_scale() {
        let q = quantize_weights_symmetric(&Tensor2D::zeros(3, 4));
        assert_eq!(q.scale(), 1.0);
        assert!(q.values().iter().all(|&v| v == 0));
        assert_eq!(q.dequantize(), Tensor2D::zeros(3, 4));
    }

    #[test]
    fn activation_direct_formula() {
        let x = Tensor2D::new(1, 2, vec![0.0, 255.0]).unwrap();
        let q = quantize_activations_dynamic(&x);
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.zero_point(), -128);
        assert_eq!(q.values(), &[-128, 127]);

        let x = Tensor2D::new(1, 2, vec![-1.0, 1.0]).unwrap();
        let q = quantize_activations_dynamic(&x);
        assert_eq!(q.scale(), 2.0 / 255.0);
    }

    #[test]
    fn constant_activation_widens_to_zero() {
        for c in [3.0f32, -0.7, 1e-3] {
            let x = Tensor2D::filled(2, 3, c);
            let q = quantize_activations_dynamic(&x);
            assert_eq!(q.scale(), c.abs() / 255.0);
            let back = q.dequantize();
            for &v in back.data() {
                assert!((v - c).abs() <= q.scale() / 2.0 * (1.0 + 1e-5));
            }
        }
        let q = quantize_activations_dynamic(&Tensor2D::zeros(1, 4));
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.dequantize(), Tensor2D::zeros(1, 4));
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(8, 16, &mut rng);
        let wq = quantize_weights_symmetric(&Tensor2D::identity(16));
        let y = quantized_linear(&wq, &x, &Tensor2D::zeros(1, 16)).unwrap();
        let dot: f32 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let cos = dot / (x.frobenius() * y.frobenius());
        assert!(cos >= 0.999, "cosine {cos}");
    }

    #[test]
    fn zero_input_gives_bias_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wq = quantize_weights_symmetric(&gaussian(12, 5, &mut rng));
        let bias = gaussian(1, 5, &mut rng);
        let y = quantized_linear(&wq, &Tensor2D::zeros(3, 12), &bias).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), bias.row(0));
        }
    }

    #[test]
    fn rejects_bad_shapes_and_affine_weights() {
        let wq = quantize_weights_symmetric(&Tensor2D::identity(4));
        assert!(quantized_linear(&wq, &Tensor2D::zeros(2, 3), &Tensor2D::zeros(1, 4)).is_err());
        assert!(quantized_linear(&wq, &Tensor2D::zeros(2, 4), &Tensor2D::zeros(1, 3)).is_err());
        let affine = quantize_activations_dynamic(&Tensor2D::filled(4, 4, 2.0));
        assert!(PackedInt8Weights::pack(&affine).is_err());
    }

    #[test]
    fn gaussian_64_relative_error_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = gaussian(64, 64, &mut rng);
        let x = gaussian(64, 64, &mut rng);
        let bias = Tensor2D::zeros(1, 64);
        let reference = matmul_f32(&x, &w).unwrap();
        let y = quantized_linear(&quantize_weights_symmetric(&w), &x, &bias).unwrap();
        let mut diff = y.clone();
        diff.add_scaled(&reference, -1.0).unwrap();
        let rel = diff.frobenius() / reference.frobenius();
        assert!(rel <= 0.02, "relative error {rel}");
    }

    #[test]
    fn kernel_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = quantize_weights_symmetric(&gaussian(33, 17, &mut rng));
        let x = gaussian(9, 33, &mut rng);
        let b = gaussian(1, 17, &mut rng);
        let a = quantized_linear(&w, &x, &b).unwrap();
        let c = quantized_linear(&w, &x, &b).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn accumulator_matches_wide_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<i8> = (0..1000).map(|_| rng.random()).collect();
        let b: Vec<i8> = (0..1000).map(|_| rng.random::<i8>().max(-127)).collect();
        let wide: i64 = a.iter().zip(&b).map(|(&x, &y)| x as i64 * y as i64).sum();
        assert_eq!(kernel::dot_scalar(&a, &b) as i64, wide);
    }

    proptest! {
        #[test]
        fn weight_round_trip_within_half_scale(values in prop::collection::vec(-1e3f32..1e3, 1..64)) {
            let w = Tensor2D::new(1, values.len(), values).unwrap();
            let q = quantize_weights_symmetric(&w);
            prop_assert!(q.values().iter().all(|&v| (-127..=127).contains(&v)));
            let back = q.dequantize();
            let tol = q.scale() / 2.0 * (1.0 + 1e-5);
            for (a, b) in w.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= tol, "{a} vs {b}, scale {}", q.scale());
            }
        }

        #[test]
        fn activation_round_trip_within_half_scale(values in prop::collection::vec(-50f32..50.0, 1..64)) {
            let x = Tensor2D::new(1, values.len(), values).unwrap();
            let q = quantize_activations_dynamic(&x);
            let back = q.dequantize();
            let tol = q.scale() / 2.0 * (1.0 + 1e-4);
            for (a, b) in x.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= tol, "{a} vs {b}, scale {}", q.scale());
            }
        }
    }
}
