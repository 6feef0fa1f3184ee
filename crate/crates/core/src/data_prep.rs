//! From a panel of levels to the rotated, standardized regression system.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, householder_qr, spd_solve};

/// Default Tikhonov weight for the least-squares pre-estimate.
pub const DEFAULT_RIDGE_TAU: f64 = 1e-6;

/// Observations of a `p`-dimensional series, one row per variable and one
/// column per time point (the first column is the initial value).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub values: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
    pub dates: Option<Vec<String>>,
}

impl SeriesPanel {
    pub fn new(
        values: DMatrix<f64>,
        labels: Option<Vec<String>>,
        dates: Option<Vec<String>>,
    ) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Dimension("panel has no variables".into()));
        }
        if values.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "panel needs at least 2 time points, got {}",
                values.ncols()
            )));
        }
        check_finite(&values)?;
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(Error::Dimension(format!(
                    "{} labels for {} variables",
                    l.len(),
                    values.nrows()
                )));
            }
        }
        if let Some(d) = &dates {
            if d.len() != values.ncols() {
                return Err(Error::Dimension(format!(
                    "{} dates for {} time points",
                    d.len(),
                    values.ncols()
                )));
            }
        }
        Ok(Self { values, labels, dates })
    }

    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, None, None)
    }

    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn series(&self, j: usize) -> Vec<f64> {
        self.values.row(j).iter().copied().collect()
    }

    pub fn label(&self, j: usize) -> String {
        match &self.labels {
            Some(l) => l[j].clone(),
            None => format!("y{}", j + 1),
        }
    }

    /// Time points `start..end` as a new panel.
    pub fn slice_points(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_points() {
            return Err(Error::Dimension(format!(
                "time slice {start}..{end} out of range for {} points",
                self.n_points()
            )));
        }
        let values = self.values.columns(start, end - start).into_owned();
        let dates = self.dates.as_ref().map(|d| d[start..end].to_vec());
        Self::new(values, self.labels.clone(), dates)
    }

    /// Keeps the listed variables, in the given order.
    pub fn select_vars(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Dimension("no variables selected".into()));
        }
        let values = DMatrix::from_fn(idx.len(), self.n_points(), |i, t| self.values[(idx[i], t)]);
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i].clone()).collect());
        Self::new(values, labels, self.dates.clone())
    }
}

/// First differences `a` and lagged levels `b_raw`, both `p x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagPair {
    pub a: DMatrix<f64>,
    pub b_raw: DMatrix<f64>,
}

/// Centered responses and rotated, standardized regressors together with the
/// QR factors of the pre-estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedSystem {
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub s_tilde: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub ridge_tau: f64,
}

impl DecomposedSystem {
    pub fn p(&self) -> usize {
        self.a_tilde.nrows()
    }

    pub fn t(&self) -> usize {
        self.a_tilde.ncols()
    }

    /// Root mean square of the centered responses.
    pub fn response_scale(&self) -> f64 {
        let n = (self.p() * self.t()) as f64;
        (self.a_tilde.iter().map(|x| x * x).sum::<f64>() / n).sqrt()
    }

    pub fn response(&self, j: usize) -> Vec<f64> {
        self.a_tilde.row(j).iter().copied().collect()
    }
}

pub fn build_lag_pairs(panel: &SeriesPanel) -> Result<LagPair> {
    let y = &panel.values;
    if y.ncols() < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 time points, got {}",
            y.ncols()
        )));
    }
    check_finite(y)?;
    let (p, t) = (y.nrows(), y.ncols() - 1);
    let a = DMatrix::from_fn(p, t, |i, s| y[(i, s + 1)] - y[(i, s)]);
    let b_raw = y.columns(0, t).into_owned();
    Ok(LagPair { a, b_raw })
}

/// Least-squares pre-estimate `(A B^T)(B B^T + tau_eff I)^-1` with
/// `tau_eff = ridge_tau * trace(B B^T) / p`.
pub fn pls_estimate(pair: &LagPair, ridge_tau: f64) -> Result<DMatrix<f64>> {
    if pair.a.shape() != pair.b_raw.shape() {
        return Err(Error::Dimension(format!(
            "A is {:?} but B is {:?}",
            pair.a.shape(),
            pair.b_raw.shape()
        )));
    }
    if !(ridge_tau >= 0.0) || !ridge_tau.is_finite() {
        return Err(Error::Invalid(format!("ridge_tau must be >= 0, got {ridge_tau}")));
    }
    let p = pair.a.nrows();
    let mut gram = &pair.b_raw * pair.b_raw.transpose();
    let tau_eff = ridge_tau * gram.trace() / p as f64;
    for i in 0..p {
        gram[(i, i)] += tau_eff;
    }
    // Pi G = A B^T  <=>  G Pi^T = B A^T, G symmetric
    let rhs = &pair.b_raw * pair.a.transpose();
    let what = if ridge_tau == 0.0 {
        "Gram matrix B B^T (set ridge_tau > 0 when T < p)"
    } else {
        "regularized Gram matrix"
    };
    let pi_t = spd_solve(&gram, &rhs, what)?;
    Ok(pi_t.transpose())
}

/// Factorizes `pi = r^T s^T` with `s` orthogonal and `r` upper triangular
/// with nonnegative diagonal. Returns `(r, s)`.
pub fn qr_decompose(pi_tilde: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if pi_tilde.nrows() != pi_tilde.ncols() {
        return Err(Error::Dimension(format!(
            "pre-estimate must be square, got {:?}",
            pi_tilde.shape()
        )));
    }
    check_finite(pi_tilde)?;
    let (s, r) = householder_qr(&pi_tilde.transpose());
    Ok((r, s))
}

pub fn rotate_and_standardize(
    pair: &LagPair,
    s_tilde: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
    ridge_tau: f64,
) -> Result<DecomposedSystem> {
    let p = pair.a.nrows();
    let t = pair.a.ncols();
    if s_tilde.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "rotation is {:?}, expected {p}x{p}",
            s_tilde.shape()
        )));
    }
    let tf = t as f64;

    let mut a_tilde = pair.a.clone();
    for i in 0..p {
        let mean = a_tilde.row(i).sum() / tf;
        a_tilde.row_mut(i).add_scalar_mut(-mean);
    }

    let mut b = s_tilde.transpose() * &pair.b_raw;
    let mut mu_b = Vec::with_capacity(p);
    let mut sigma_b = Vec::with_capacity(p);
    let root_t = tf.sqrt();
    for i in 0..p {
        let mu = b.row(i).sum() / tf;
        let var = b.row(i).iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / tf;
        let sigma = var.sqrt();
        let max_abs = b.row(i).amax();
        if !(sigma > 1e-12 * max_abs) {
            return Err(Error::DegenerateRow { row: i });
        }
        for s in 0..t {
            b[(i, s)] = root_t * (b[(i, s)] - mu) / sigma;
        }
        mu_b.push(mu);
        sigma_b.push(sigma);
    }

    Ok(DecomposedSystem {
        a_tilde,
        b_tilde: b,
        s_tilde: s_tilde.clone(),
        r_tilde: r_tilde.clone(),
        mu_b,
        sigma_b,
        ridge_tau,
    })
}

/// Runs the full preparation pipeline on a panel of levels.
pub fn decompose(panel: &SeriesPanel, ridge_tau: f64) -> Result<DecomposedSystem> {
    let pair = build_lag_pairs(panel)?;
    let pi = pls_estimate(&pair, ridge_tau)?;
    let (r, s) = qr_decompose(&pi)?;
    rotate_and_standardize(&pair, &s, &r, ridge_tau)
}
