//! Forward kernels on raw row-major buffers, shared by the tape and by the
//! plain-tensor functions in [`crate::ops`].

use crate::Real;

pub const GELU_COEF: Real = 0.044_715;
const SQRT_2_OVER_PI: Real = 0.797_884_560_802_865_4;

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n` as seen through the strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: &[Real],
    rsa: isize,
    csa: isize,
    b: &[Real],
    rsb: isize,
    csb: isize,
    beta: Real,
    c: &mut [Real],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        } else {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: callers pass buffers that cover the strided m x k, k x n and
    // m x n views; the asserts below check the extents for the row-major
    // and transposed layouts we use.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Row-major `[m,k] x [k,n]` (or `[m,k] x [n,k]^T` when `trans_b`).
pub fn matmul_into(
    a: &[Real],
    b: &[Real],
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    alpha: Real,
    out: &mut [Real],
) {
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    gemm(
        m, k, n, alpha, a, k as isize, 1, b, rsb, csb, 0.0, out, n as isize, 1,
    );
}

/// Row-wise softmax over `cols`, with optional key masking and causal masking.
///
/// Masked entries get probability exactly 0. A fully masked row yields all
/// zeros rather than NaN.
pub fn softmax_rows(
    x: &[Real],
    rows: usize,
    cols: usize,
    key_mask: Option<&[bool]>,
    causal_offset: Option<usize>,
    out: &mut [Real],
) {
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        let limit = causal_offset.map_or(cols, |off| (r + off + 1).min(cols));
        let visible = |j: usize| j < limit && key_mask.is_none_or(|m| m[j]);
        let mut max = Real::NEG_INFINITY;
        for (j, &v) in src.iter().enumerate() {
            if visible(j) && v > max {
                max = v;
            }
        }
        if max == Real::NEG_INFINITY {
            dst.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let mut sum = 0.0;
        for (j, (d, &v)) in dst.iter_mut().zip(src).enumerate() {
            if visible(j) {
                let e = (v - max).exp();
                *d = e;
                sum += e;
            } else {
                *d = 0.0;
            }
        }
        let inv = 1.0 / sum;
        dst.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Layer normalisation over the last dimension. Writes normalised values,
/// per-row mean and reciprocal standard deviation.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm(
    x: &[Real],
    rows: usize,
    cols: usize,
    gamma: &[Real],
    beta: &[Real],
    eps: Real,
    out: &mut [Real],
    mean: &mut [Real],
    rstd: &mut [Real],
) {
    let inv_n = 1.0 / cols as Real;
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let mu = src.iter().sum::<Real>() * inv_n;
        let var = src.iter().map(|v| (v - mu) * (v - mu)).sum::<Real>() * inv_n;
        let rs = 1.0 / (var + eps).sqrt();
        mean[r] = mu;
        rstd[r] = rs;
        let dst = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            dst[j] = (src[j] - mu) * rs * gamma[j] + beta[j];
        }
    }
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: Real) -> Real {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: Real) -> Real {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}

/// Mean negative log-likelihood over rows whose target is not `pad_id`.
/// Fills `probs` with the row softmax and returns `(loss, counted_rows)`.
pub fn cross_entropy_rows(
    logits: &[Real],
    rows: usize,
    vocab: usize,
    targets: &[usize],
    pad_id: usize,
    probs: &mut [Real],
) -> (Real, usize) {
    softmax_rows(logits, rows, vocab, None, None, probs);
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, &t) in targets.iter().enumerate().take(rows) {
        if t == pad_id {
            continue;
        }
        // log-softmax computed directly for accuracy when p underflows
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<Real>().ln();
        total += lse - row[t];
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as Real, count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_masked_row_is_zero() {
        let x = [1.0, 2.0, 3.0];
        let mut out = [9.0; 3];
        softmax_rows(&x, 1, 3, Some(&[false, false, false]), None, &mut out);
        assert_eq!(out, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn causal_mask_hides_future() {
        let x = [0.0; 9];
        let mut out = [0.0; 9];
        softmax_rows(&x, 3, 3, None, Some(0), &mut out);
        assert_eq!(&out[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&out[3..6], &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn gemm_with_empty_inner_dim_zeroes() {
        let mut c = [5.0; 4];
        matmul_into(&[], &[], 2, 0, 2, false, 1.0, &mut c);
        assert_eq!(c, [0.0; 4]);
    }
}
