//! Dense helpers shared by the topic, design and forward modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Diagonal jitter added to near-singular symmetric blocks.
pub const JITTER: f64 = 1e-8;

/// Cholesky factor of `m`, retrying once with `JITTER * I` added. The flag
/// reports whether the jitter was needed.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, bool)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
            return Some((c, false));
        }
    }
    let n = m.nrows();
    let jittered = m + DMatrix::<f64>::identity(n, n) * JITTER;
    Cholesky::new(jittered).map(|c| (c, true))
}

/// `log |m|` for a symmetric positive definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let c = Cholesky::new(m.clone())?;
    Some(log_det_from_cholesky(&c))
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Curvature of `scale * log(sum_k exp(eta_k))` in the free coordinates
/// `eta_1..eta_{K-1}` (with `eta_0 = 0`): `scale * (diag(w) - w w')` where
/// `w` drops the first probability.
pub fn softmax_curvature(probs: &[f64], scale: f64) -> DMatrix<f64> {
    let free = &probs[1..];
    let d = free.len();
    DMatrix::from_fn(d, d, |a, b| {
        let diag = if a == b { free[a] } else { 0.0 };
        scale * (diag - free[a] * free[b])
    })
}

/// `log |scale * (diag(w) - w w') + jitter * I|` via the matrix determinant
/// lemma, without forming the matrix. Returns `None` when the determinant is
/// not positive.
pub fn softmax_curvature_log_det(probs: &[f64], scale: f64, jitter: f64) -> Option<f64> {
    let free = &probs[1..];
    let mut log_diag = 0.0;
    let mut quad = 0.0;
    for &w in free {
        let d = scale * w + jitter;
        if !(d > 0.0) {
            return None;
        }
        log_diag += d.ln();
        quad += scale * w * w / d;
    }
    let rest = 1.0 - quad;
    if !(rest > 0.0) || !rest.is_finite() {
        return None;
    }
    Some(log_diag + rest.ln())
}

/// Solve `L' x = z` for the lower Cholesky factor `L`; `x` then has
/// covariance `(L L')^{-1}` when `z` is standard normal.
pub fn solve_upper_transpose(c: &Cholesky<f64, Dyn>, z: &DVector<f64>) -> DVector<f64> {
    let l = c.l();
    l.transpose()
        .solve_upper_triangular(z)
        .expect("cholesky factor has a positive diagonal")
}

pub fn softmax_with_zero(lambda: &[f64]) -> Vec<f64> {
    let max = lambda.iter().copied().fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(lambda.len() + 1);
    out.push((-max).exp());
    out.extend(lambda.iter().map(|l| (l - max).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= s);
    out
}
