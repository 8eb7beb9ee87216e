//! Dense solves used by the Newton and polish steps.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).ok()
}

/// Like [`lstsq_min_norm`] after scaling every column to unit norm, so the
/// rank cutoff does not drop directions of small-magnitude columns. The
/// solution has minimum norm in the scaled variables.
pub(crate) fn lstsq_scaled(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let norms: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let mut scaled = a.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col /= norms[k];
    }
    let mut x = lstsq_min_norm(&scaled, b)?;
    for (k, v) in x.iter_mut().enumerate() {
        *v /= norms[k];
    }
    Some(x)
}

/// Solves `(h + delta I) x = rhs` for symmetric positive semidefinite `h`,
/// raising `delta` until the Cholesky factorization succeeds.
pub(crate) fn solve_psd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = h.nrows();
    let scale = (0..n).map(|k| h[(k, k)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = scale * 1e-14;
    loop {
        let mut damped = h.clone();
        for k in 0..n {
            damped[(k, k)] += delta;
        }
        if let Some(chol) = damped.cholesky() {
            return chol.solve(rhs);
        }
        delta *= 100.0;
        if delta > scale * 1e6 {
            // Fall back to a scaled gradient step.
            return rhs / scale;
        }
    }
}
