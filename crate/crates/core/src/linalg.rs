//! Dense linear-algebra helpers on `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Householder QR `m = q * r` with `q` orthogonal and `r` upper triangular
/// with a nonnegative diagonal.
///
/// Reflections are skipped for columns whose subdiagonal part is already
/// zero, so triangular input with a positive diagonal comes back untouched and
/// the zero matrix yields `q = I`.
pub fn householder_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let mut r = m.clone();
    let mut q = DMatrix::<f64>::identity(rows, rows);

    for k in 0..cols.min(rows) {
        let tail_sq: f64 = (k + 1..rows).map(|i| r[(i, k)] * r[(i, k)]).sum();
        if tail_sq == 0.0 {
            continue;
        }
        let x0 = r[(k, k)];
        let norm = (x0 * x0 + tail_sq).sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };

        let mut v = DVector::<f64>::zeros(rows - k);
        v[0] = x0 - alpha;
        for i in k + 1..rows {
            v[i - k] = r[(i, k)];
        }
        let vnorm = v.norm();
        v /= vnorm;

        for j in 0..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..rows {
                r[(i, j)] -= 2.0 * dot * v[i - k];
            }
        }
        for i in 0..rows {
            let dot: f64 = (k..rows).map(|l| q[(i, l)] * v[l - k]).sum();
            for l in k..rows {
                q[(i, l)] -= 2.0 * dot * v[l - k];
            }
        }
        r[(k, k)] = alpha;
        for i in k + 1..rows {
            r[(i, k)] = 0.0;
        }
    }

    for k in 0..cols.min(rows) {
        if r[(k, k)] < 0.0 {
            for j in 0..cols {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..rows {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    (q, r)
}

/// Solves `gram * x = rhs` for symmetric positive definite `gram`.
///
/// A Cholesky pivot below `1e-12` times the largest diagonal entry is treated
/// as singular.
pub fn spd_solve(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Singular(what.to_string()));
    }
    let chol = nalgebra::Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let l = chol.l_dirty();
    for i in 0..n {
        let piv = l[(i, i)] * l[(i, i)];
        if !(piv > 1e-12 * scale) {
            return Err(Error::Singular(what.to_string()));
        }
    }
    Ok(chol.solve(rhs))
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}
