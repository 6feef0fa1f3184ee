//! Spike-and-slab lasso densities, the slab-responsibility maps `p*` and
//! `λ*`, the two negative log-posterior objectives and the sparsity
//! diagnostics built on the intersection line.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::data_prep::DecomposedSystem;
use crate::error::{Error, Result};
use crate::quadrature::LogQuadrature;

/// Hyperparameters of the column-wise SSL prior.
///
/// The spike scale is stored per column; a scalar ladder is a constant vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslHyper {
    pub lambda0: Vec<f64>,
    pub lambda1: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SslHyper {
    pub fn uniform(p: usize, lambda0: f64, lambda1: f64, a: f64, b: f64) -> Self {
        Self {
            lambda0: vec![lambda0; p],
            lambda1,
            a: vec![a; p],
            b: vec![b; p],
        }
    }

    pub fn p(&self) -> usize {
        self.lambda0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.a.len() != p || self.b.len() != p {
            return Err(Error::Dimension(format!(
                "hyperparameter lengths differ: lambda0 {p}, a {}, b {}",
                self.a.len(),
                self.b.len()
            )));
        }
        if !(self.lambda1 > 0.0) {
            return Err(Error::Domain(format!("lambda1 must be > 0, got {}", self.lambda1)));
        }
        for j in 0..p {
            if !(self.lambda0[j] >= self.lambda1) {
                return Err(Error::Domain(format!(
                    "column {j}: lambda0 {} below lambda1 {}",
                    self.lambda0[j], self.lambda1
                )));
            }
            if !(self.a[j] >= 1.0 && self.b[j] >= 1.0) {
                return Err(Error::Domain(format!(
                    "column {j}: Beta prior needs a, b >= 1, got ({}, {})",
                    self.a[j], self.b[j]
                )));
            }
        }
        Ok(())
    }
}

/// `(1-γ) ψ0(x) + γ ψ1(x)` with Laplace components `ψ(x) = λ/2 e^{-λ|x|}`.
pub fn ssl_density(x: f64, slab: bool, lambda0: f64, lambda1: f64) -> f64 {
    let lam = if slab { lambda1 } else { lambda0 };
    0.5 * lam * (-lam * x.abs()).exp()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Log odds of spike over slab at `x`.
fn spike_log_odds(x: f64, theta: f64, lambda0: f64, lambda1: f64) -> f64 {
    (lambda0 / lambda1).ln() + (1.0 - theta).ln() - theta.ln() + x.abs() * (lambda1 - lambda0)
}

pub fn log_p_star(x: f64, theta: f64, lambda0: f64, lambda1: f64) -> f64 {
    -softplus(spike_log_odds(x, theta, lambda0, lambda1))
}

/// Posterior slab responsibility of a coefficient of size `x`.
pub fn p_star(x: f64, theta: f64, lambda0: f64, lambda1: f64) -> f64 {
    1.0 / (1.0 + spike_log_odds(x, theta, lambda0, lambda1).exp())
}

/// Adaptive lasso weight `λ0 + (λ1 - λ0) p*(x)`.
pub fn lambda_star(x: f64, theta: f64, lambda0: f64, lambda1: f64) -> f64 {
    lambda0 + (lambda1 - lambda0) * p_star(x, theta, lambda0, lambda1)
}

/// `Σ_j ( λ1 ||R_j||_1 + Σ_i log p*_j(R_ij, θ_j) )`.
pub fn penalty(r: &DMatrix<f64>, theta: &[f64], hyper: &SslHyper) -> f64 {
    let (l1, prior) = penalty_parts(r, theta, hyper);
    l1 + prior
}

fn penalty_parts(r: &DMatrix<f64>, theta: &[f64], hyper: &SslHyper) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut prior = 0.0;
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            let x = r[(i, j)];
            l1 += hyper.lambda1 * x.abs();
            prior += log_p_star(x, theta[j], hyper.lambda0[j], hyper.lambda1);
        }
    }
    (l1, prior)
}

/// Term-by-term value of a negative log posterior.
///
/// `prior_term` holds `Σ log p*` for the fixed-θ objective and `-Σ log p**`
/// for the hierarchical one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslObjectiveBreakdown {
    pub gauss_term: f64,
    pub log_sigma_term: f64,
    pub l1_term: f64,
    pub prior_term: f64,
    pub total: f64,
}

impl SslObjectiveBreakdown {
    fn new(gauss_term: f64, log_sigma_term: f64, l1_term: f64, prior_term: f64) -> Self {
        Self {
            gauss_term,
            log_sigma_term,
            l1_term,
            prior_term,
            total: gauss_term + log_sigma_term + l1_term + prior_term,
        }
    }
}

/// Residuals `Ã_t - R^T B̃_t`, one row per response.
pub fn residuals(r: &DMatrix<f64>, system: &DecomposedSystem) -> DMatrix<f64> {
    &system.a_tilde - r.transpose() * &system.b_tilde
}

fn check_shape(r: &DMatrix<f64>, system: &DecomposedSystem) -> Result<()> {
    let p = system.p();
    if r.shape() != (p, p) {
        return Err(Error::Dimension(format!("R is {:?}, expected {p}x{p}", r.shape())));
    }
    Ok(())
}

/// Objective of the fixed-θ model with a common noise scale `sigma`.
pub fn neg_log_posterior_simple(
    r: &DMatrix<f64>,
    sigma: f64,
    system: &DecomposedSystem,
    theta: &[f64],
    hyper: &SslHyper,
) -> Result<SslObjectiveBreakdown> {
    check_shape(r, system)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    let (p, t) = (system.p() as f64, system.t() as f64);
    let e = residuals(r, system);
    let gauss = e.iter().map(|x| x * x).sum::<f64>() / (2.0 * sigma * sigma);
    let log_sigma = (p * t + 2.0) * sigma.ln();
    let (l1, prior) = penalty_parts(r, theta, hyper);
    Ok(SslObjectiveBreakdown::new(gauss, log_sigma, l1, prior))
}

/// Objective of the hierarchical model with per-column noise scales and a
/// Beta prior on each θ_j integrated out.
pub fn neg_log_posterior_hier(
    r: &DMatrix<f64>,
    sigma: &[f64],
    system: &DecomposedSystem,
    hyper: &SslHyper,
) -> Result<SslObjectiveBreakdown> {
    check_shape(r, system)?;
    let p = system.p();
    if sigma.len() != p {
        return Err(Error::Dimension(format!("{} noise scales for {p} columns", sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("sigma must be > 0, got {s}")));
    }
    let t = system.t() as f64;
    let e = residuals(r, system);
    let (mut gauss, mut log_sigma, mut l1, mut prior) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..p {
        let s2 = 2.0 * sigma[j] * sigma[j];
        gauss += e.row(j).iter().map(|x| x * x / s2).sum::<f64>();
        log_sigma += (t + 2.0) * sigma[j].ln();
        let col: Vec<f64> = r.column(j).iter().copied().collect();
        l1 += hyper.lambda1 * col.iter().map(|x| x.abs()).sum::<f64>();
        prior -= log_p_double_star(&col, hyper.a[j], hyper.b[j], hyper.lambda0[j], hyper.lambda1)?;
    }
    Ok(SslObjectiveBreakdown::new(gauss, log_sigma, l1, prior))
}

/// `log ∫_0^1 Π_i θ π(θ) / p*(x_i, θ) dθ` with `π` the Beta(a, b) density.
pub fn log_p_double_star(col: &[f64], a: f64, b: f64, lambda0: f64, lambda1: f64) -> Result<f64> {
    if !(a >= 1.0 && b >= 1.0) {
        return Err(Error::Domain(format!("Beta prior needs a, b >= 1, got ({a}, {b})")));
    }
    let n = col.len() as f64;
    let ln_b = ln_beta(a, b);
    let log_f = |th: f64| {
        let ln_prior = (a - 1.0) * th.ln() + (b - 1.0) * (1.0 - th).ln() - ln_b;
        let s: f64 = col.iter().map(|&x| log_p_star(x, th, lambda0, lambda1)).sum();
        n * (th.ln() + ln_prior) - s
    };
    LogQuadrature::default().integrate(log_f)
}

/// Coefficient magnitude at which spike and slab responsibilities balance.
/// Negative when p*(0) > 1/2, i.e. the slab dominates for every magnitude.
pub fn intersection_delta(theta: f64, lambda0: f64, lambda1: f64) -> Result<f64> {
    if !(lambda0 > lambda1) {
        return Err(Error::Domain(format!(
            "intersection line needs lambda0 > lambda1, got {lambda0} <= {lambda1}"
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta must lie in (0, 1), got {theta}")));
    }
    // log(1/p*(0) - 1) is the spike log odds at zero
    Ok(spike_log_odds(0.0, theta, lambda0, lambda1) / (lambda0 - lambda1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityDiagnostics {
    pub delta: Vec<f64>,
    pub gamma_rows: Vec<usize>,
    pub gamma_total: usize,
    pub generalized_rank: usize,
}

/// Thresholds `beta` row-wise at `delta` (strictly) and counts survivors.
pub fn generalized_dimensionality(beta: &DMatrix<f64>, delta: &[f64]) -> Result<SparsityDiagnostics> {
    if delta.len() != beta.nrows() {
        return Err(Error::Dimension(format!(
            "{} thresholds for {} rows",
            delta.len(),
            beta.nrows()
        )));
    }
    let gamma_rows: Vec<usize> = (0..beta.nrows())
        .map(|i| beta.row(i).iter().filter(|x| x.abs() > delta[i]).count())
        .collect();
    Ok(SparsityDiagnostics {
        delta: delta.to_vec(),
        gamma_total: gamma_rows.iter().sum(),
        generalized_rank: gamma_rows.iter().filter(|&&g| g > 0).count(),
        gamma_rows,
    })
}

/// Diagnostics of an estimate `R` (rows of `β = Rᵀ` are columns of `R`).
pub fn sparsity_diagnostics(
    r: &DMatrix<f64>,
    theta: &[f64],
    hyper: &SslHyper,
) -> Result<SparsityDiagnostics> {
    let delta = (0..r.ncols())
        .map(|i| intersection_delta(theta[i], hyper.lambda0[i], hyper.lambda1))
        .collect::<Result<Vec<_>>>()?;
    generalized_dimensionality(&r.transpose(), &delta)
}
