//! Differentiable building blocks with explicit forward/backward pairs.
//!
//! The network graph here is small and static, so instead of a general tape
//! each op exposes an analytic backward function; the model composes them in
//! reverse order. Backward functions accumulate weight gradients into
//! [`Parameter::grad`](crate::matrix::Parameter) and return the gradient with
//! respect to the op input.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Parameter};

/// Default guard for L2 normalization of near-zero rows.
pub const L2_NORM_EPS: f64 = 1e-12;

/// Norm product below this is treated as a degenerate cosine input.
const COSINE_TINY: f64 = 1e-300;

/// y = x·w + b with b broadcast per row. x: B x I, w: I x O, b: 1 x O.
pub fn affine(x: &Matrix, w: &Parameter, b: &Parameter) -> Result<Matrix> {
    if x.cols() != w.value.rows() {
        return Err(Error::dim(
            format!("affine({})", w.name),
            format!("input cols = {}", w.value.rows()),
            x.shape_str(),
        ));
    }
    if b.value.rows() != 1 || b.value.cols() != w.value.cols() {
        return Err(Error::dim(
            format!("affine({})", w.name),
            format!("bias 1x{}", w.value.cols()),
            b.value.shape_str(),
        ));
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.row(0);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v += bias[c];
        }
    }
    Ok(out)
}

/// Backward for [`affine`]: accumulates into `w.grad`, `b.grad`, returns dL/dx.
pub fn affine_backward(
    x: &Matrix,
    w: &mut Parameter,
    b: &mut Parameter,
    grad_out: &Matrix,
) -> Result<Matrix> {
    let dw = x.matmul_tn(grad_out)?;
    w.grad.axpy(1.0, &dw)?;
    b.grad.axpy(1.0, &grad_out.col_sums())?;
    grad_out.matmul_nt(&w.value)
}

/// Row-wise L2 normalization: each row divided by max(its norm, eps).
pub fn l2_normalize(x: &Matrix, eps: f64) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(eps);
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

/// Backward for [`l2_normalize`] given the original input.
pub fn l2_normalize_backward(x: &Matrix, eps: f64, grad_out: &Matrix) -> Result<Matrix> {
    if x.shape() != grad_out.shape() {
        return Err(Error::dim(
            "l2_normalize_backward",
            x.shape_str(),
            grad_out.shape_str(),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xin = x.row(r);
        let g = grad_out.row(r);
        let norm = xin.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dst = out.row_mut(r);
        if norm >= eps {
            // y = x/n  =>  dx = (g - y (y·g)) / n
            let inv = 1.0 / norm;
            let y: Vec<f64> = xin.iter().map(|&v| v * inv).collect();
            let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..xin.len() {
                dst[c] = (g[c] - y[c] * dot) * inv;
            }
        } else {
            // constant scale branch of max(norm, eps)
            for c in 0..xin.len() {
                dst[c] = g[c] / eps;
            }
        }
    }
    Ok(out)
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward for [`sigmoid`] given its output y: g ⊙ y ⊙ (1 - y).
pub fn sigmoid_backward(y: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    grad_out.zip_map(y, |g, s| g * s * (1.0 - s))
}

pub fn tanh(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// Backward for [`tanh`] given its output y: g ⊙ (1 - y²).
pub fn tanh_backward(y: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    grad_out.zip_map(y, |g, t| g * (1.0 - t * t))
}

/// Element-wise product; shapes must match.
pub fn hadamard(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.shape() != y.shape() {
        return Err(Error::dim("hadamard", x.shape_str(), y.shape_str()));
    }
    x.zip_map(y, |a, b| a * b)
}

/// Column-wise concatenation of two matrices with equal row counts.
pub fn concat_cols(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(Error::dim(
            "concat_cols",
            format!("{} rows", x.rows()),
            format!("{} rows", y.rows()),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols() + y.cols());
    for r in 0..x.rows() {
        let dst = out.row_mut(r);
        dst[..x.cols()].copy_from_slice(x.row(r));
        dst[x.cols()..].copy_from_slice(y.row(r));
    }
    Ok(out)
}

/// Split columns at `at`; inverse of [`concat_cols`].
pub fn split_cols(m: &Matrix, at: usize) -> Result<(Matrix, Matrix)> {
    if at > m.cols() {
        return Err(Error::dim(
            "split_cols",
            format!("split point <= {}", m.cols()),
            at.to_string(),
        ));
    }
    let mut left = Matrix::zeros(m.rows(), at);
    let mut right = Matrix::zeros(m.rows(), m.cols() - at);
    for r in 0..m.rows() {
        let src = m.row(r);
        left.row_mut(r).copy_from_slice(&src[..at]);
        right.row_mut(r).copy_from_slice(&src[at..]);
    }
    Ok((left, right))
}

/// Cosine similarity of two vectors, clamped to [-1, 1] against rounding.
///
/// A zero norm on either side makes the quotient undefined; evaluation must
/// not abort on a degenerate embedding, so the score is defined as 0 and the
/// second return flags the case.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> (f64, bool) {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom < COSINE_TINY {
        return (0.0, true);
    }
    ((dot / denom).clamp(-1.0, 1.0), false)
}

/// Gradient of cosine_sim(a, b) with respect to `a` and `b`, scaled by `upstream`.
///
/// Degenerate (near-zero norm) inputs get a zero gradient, matching the
/// constant score they produce.
pub fn cosine_sim_backward(a: &[f64], b: &[f64], upstream: f64, da: &mut [f64], db: &mut [f64]) {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    if na * nb < COSINE_TINY {
        return;
    }
    let c = dot / (na * nb);
    for i in 0..a.len() {
        da[i] += upstream * (b[i] / (na * nb) - c * a[i] / na2);
        db[i] += upstream * (a[i] / (na * nb) - c * b[i] / nb2);
    }
}

/// Mean softmax cross-entropy over the batch plus its logit gradient.
///
/// Uses the log-sum-exp form for stability. Gradient is (softmax - onehot)/B.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels", b),
            format!("{} labels", labels.len()),
        ));
    }
    if b == 0 {
        return Err(Error::BatchTooSmall {
            context: "softmax_cross_entropy",
            min: 1,
            got: 0,
        });
    }
    for &y in labels {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: c,
            });
        }
    }
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[labels[r]];
        let dst = grad.row_mut(r);
        for (j, &z) in row.iter().enumerate() {
            dst[j] = ((z - max).exp() / sum_exp) * inv_b;
        }
        dst[labels[r]] -= inv_b;
    }
    Ok((total * inv_b, grad))
}
