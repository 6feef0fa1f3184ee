//! Composite Gauss–Legendre quadrature on `(0, 1)` for integrands supplied in
//! log space.

use crate::error::{Error, Result};

const ORDER: usize = 20;
const MIN_PANELS: usize = 2;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// found by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy)]
pub struct LogQuadrature {
    /// Absolute tolerance on the log of the integral.
    pub tol: f64,
    pub max_nodes: usize,
}

impl Default for LogQuadrature {
    fn default() -> Self {
        Self { tol: 1e-8, max_nodes: 1 << 20 }
    }
}

impl LogQuadrature {
    /// `log ∫_0^1 exp(log_f(x)) dx`, doubling the panel count until two
    /// successive estimates agree within `tol`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, log_f: F) -> Result<f64> {
        let (nodes, weights) = gauss_legendre(ORDER);
        let mut panels = MIN_PANELS;
        let mut prev: Option<f64> = None;
        let mut terms = Vec::new();
        loop {
            let h = 1.0 / panels as f64;
            terms.clear();
            for k in 0..panels {
                let lo = k as f64 * h;
                for (xi, wi) in nodes.iter().zip(&weights) {
                    let x = lo + 0.5 * h * (xi + 1.0);
                    let lf = log_f(x);
                    if lf.is_nan() || lf == f64::INFINITY {
                        return Err(Error::Quadrature(format!(
                            "integrand is {lf} at {x}"
                        )));
                    }
                    terms.push((0.5 * h * wi).ln() + lf);
                }
            }
            let est = log_sum_exp(&terms);
            if let Some(p) = prev {
                let both_zero = p == f64::NEG_INFINITY && est == f64::NEG_INFINITY;
                if both_zero || (est - p).abs() < self.tol {
                    return Ok(est);
                }
            }
            prev = Some(est);
            if panels * 2 * ORDER > self.max_nodes {
                return Ok(est);
            }
            panels *= 2;
        }
    }
}
