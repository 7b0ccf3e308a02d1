//! Raw slice kernels shared by the tape and the tape-free helpers.

use crate::{Error, Result};

pub(crate) const LN_EPS: f32 = 1e-5;
const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_K: f32 = 0.044_715;

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::Dimension(format!("matmul of {a:?} by {b:?}"))),
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`) for an (m×k)·(k×n) product.
/// Each operand is described by its slice and (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc, "gemm: output slice too short");
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs slice too short");
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs slice too short");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every element the kernel touches inside
    // the three slices, and `c` is borrowed mutably so it cannot alias `a`/`b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// In-place softmax of `x / tau` over consecutive rows of length `k`.
pub(crate) fn softmax_rows(data: &mut [f32], k: usize, tau: f32) {
    let inv = 1.0 / tau;
    for row in data.chunks_mut(k) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for v in row.iter_mut() {
            *v = exp_approx((*v - max) * inv);
        }
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        let norm = (1.0 / sum) as f32;
        for v in row.iter_mut() {
            *v *= norm;
        }
    }
}

/// Branch-free e^x (Cephes-style range reduction plus a degree-6 polynomial),
/// relative error below 2e-7 on [-87, 88]. Unlike libm `expf` it
/// auto-vectorises.
#[inline]
pub(crate) fn exp_approx(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    // adding and removing 1.5·2^23 rounds to nearest without a libm call
    const SHIFTER: f32 = 12_582_912.0;
    let shifted = x * LOG2E + SHIFTER;
    let n = shifted - SHIFTER;
    // the integer n sits in the low mantissa bits of `shifted`
    let ni = shifted.to_bits() as i32 - SHIFTER.to_bits() as i32;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_1e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 0.5;
    let e = p * r * r + r + 1.0;
    let bits = ((ni + 127) as u32) << 23;
    e * f32::from_bits(bits)
}

// 1 - 2/(e^2u + 1) saturates cleanly to ±1 at both ends.
#[inline]
fn fast_tanh(u: f32) -> f32 {
    1.0 - 2.0 / (exp_approx(2.0 * u) + 1.0)
}

pub(crate) fn gelu(x: f32) -> f32 {
    let t = fast_tanh(GELU_C * (x + GELU_K * x * x * x));
    0.5 * x * (1.0 + t)
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let t = fast_tanh(GELU_C * (x + GELU_K * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Layer normalisation over rows of length `d`. Returns (normalised rows,
/// per-row reciprocal standard deviations).
pub(crate) fn layernorm_rows(x: &[f32], d: usize, gamma: &[f32], beta: &[f32], out: &mut [f32]) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0f32; x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = (1.0 / (var + LN_EPS as f64).sqrt()) as f32;
        let mean = mean as f32;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
        rstd.push(rs);
    }
    (xhat, rstd)
}
