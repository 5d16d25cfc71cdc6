//! Gradient-free tensor functions. The tape records the same kernels.

use crate::kernels;
use crate::{NumericsError, Real, Result, Tensor};

/// Standard 2-D matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    kernels::matmul_into(a.data(), b.data(), m, k, n, false, 1.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Softmax along `axis`, max-subtracted for stability. NaN input is rejected.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim().max(1) {
        return Err(NumericsError::BadAxis {
            axis,
            ndim: x.ndim(),
        });
    }
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(NumericsError::NonFinite { op: "softmax" });
    }
    if x.ndim() == 0 {
        return Ok(Tensor::scalar(1.0));
    }
    let shape = x.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; x.len()];
    let mut lane = vec![0.0; len];
    let mut lane_out = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            for (j, slot) in lane.iter_mut().enumerate() {
                *slot = x.data()[(o * len + j) * inner + i];
            }
            kernels::softmax_rows(&lane, 1, len, None, None, &mut lane_out);
            for (j, v) in lane_out.iter().enumerate() {
                out[(o * len + j) * inner + i] = *v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Mean token-level negative log-likelihood over non-pad targets.
///
/// `logits` is `[steps, vocab]`. Returns 0 when every target is padding.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], pad_id: usize) -> Result<Real> {
    if logits.ndim() != 2 || logits.shape()[0] != targets.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let vocab = logits.shape()[1];
    if let Some(&bad) = targets.iter().find(|&&t| t != pad_id && t >= vocab) {
        return Err(NumericsError::TargetOutOfRange { target: bad, vocab });
    }
    let mut probs = vec![0.0; logits.len()];
    let (loss, _) =
        kernels::cross_entropy_rows(logits.data(), targets.len(), vocab, targets, pad_id, &mut probs);
    Ok(loss)
}
