//! Column-wise EM for the spike-and-slab lasso.
//!
//! Each EM iteration solves an exact weighted lasso for one column of `R`
//! (coordinate descent with soft-thresholding on the Gram matrix), then
//! updates the mixing weight θ and the noise variance in closed form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssl_core::{lambda_star, p_star};

pub const SIGMA2_FLOOR: f64 = 1e-12;
/// Coordinate descent stops once no coordinate moves by more than this.
pub const CD_TOL: f64 = 1e-10;
/// Sweep-cap exits with a larger final change are reported as failures.
pub const CD_FAIL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnState {
    pub beta: Vec<f64>,
    pub theta: f64,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub last_delta: f64,
}

impl ColumnState {
    /// `β = 0`, `θ = 1/2`, `σ²` the population variance of the response.
    pub fn initial(response: &[f64], p: usize) -> Self {
        let n = response.len() as f64;
        let mean = response.iter().sum::<f64>() / n;
        let var = response.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            beta: vec![0.0; p],
            theta: 0.5,
            sigma2: var.max(SIGMA2_FLOOR),
            iterations: 0,
            converged: false,
            last_delta: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0)
    }
}

/// Starting value of σ² for a fresh fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaInit {
    /// Population variance of the response.
    ResponseVariance,
    /// Residual variance of the unpenalized least-squares fit, falling back
    /// to the response variance when `T <= p + 2` or the Gram is singular.
    /// Unlike the response variance it does not count the signal as noise,
    /// so the first spike threshold is comparable across columns.
    #[default]
    LeastSquaresResidual,
}

/// Per-column prior: spike and slab scales plus the Beta(a, b) prior on θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnPrior {
    pub lambda0: f64,
    pub lambda1: f64,
    pub a: f64,
    pub b: f64,
}

/// Regressors `B̃` (stored time-major) and their Gram matrix, shared by every
/// column of one system.
#[derive(Debug, Clone)]
pub struct Design {
    bt: DMatrix<f64>,
    gram: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Design {
    pub fn new(b_tilde: &DMatrix<f64>) -> Self {
        let gram = b_tilde * b_tilde.transpose();
        let chol = if b_tilde.ncols() > b_tilde.nrows() + 2 {
            nalgebra::Cholesky::new(gram.clone())
        } else {
            None
        };
        Self {
            bt: b_tilde.transpose(),
            gram,
            chol,
        }
    }

    /// Unpenalized least-squares residual variance `RSS / (T - p)`, when the
    /// Gram matrix is invertible and `T > p + 2`.
    pub fn residual_variance(&self, a: &[f64], corr: &[f64]) -> Option<f64> {
        let chol = self.chol.as_ref()?;
        let c = DMatrix::from_column_slice(corr.len(), 1, corr);
        let sol = chol.solve(&c);
        let fit: f64 = (0..corr.len()).map(|i| sol[(i, 0)] * corr[i]).sum();
        let tss: f64 = a.iter().map(|x| x * x).sum();
        let v = (tss - fit) / (self.t() - self.p()) as f64;
        (v.is_finite() && v > 0.0).then_some(v)
    }

    pub fn p(&self) -> usize {
        self.gram.nrows()
    }

    pub fn t(&self) -> usize {
        self.bt.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `B̃ a`.
    pub fn correlations(&self, a: &[f64]) -> Vec<f64> {
        (0..self.p())
            .map(|i| self.bt.column(i).iter().zip(a).map(|(b, a)| b * a).sum())
            .collect()
    }

    pub fn residuals(&self, a: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut e = a.to_vec();
        for (i, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in e.iter_mut().zip(self.bt.column(i).iter()) {
                    *e -= b * x;
                }
            }
        }
        e
    }

    /// `Σ_t (a_t - βᵀB̃_t)² + 2 Σ_i w_i |β_i|`, evaluated from residuals.
    pub fn lasso_objective(&self, a: &[f64], beta: &[f64], weights: &[f64]) -> f64 {
        let rss: f64 = self.residuals(a, beta).iter().map(|e| e * e).sum();
        rss + 2.0 * beta.iter().zip(weights).map(|(b, w)| w * b.abs()).sum::<f64>()
    }

    /// Objective up to the constant `aᵀa`, from the Gram form.
    fn gram_objective(&self, corr: &[f64], beta: &[f64], weights: &[f64]) -> f64 {
        let p = self.p();
        let mut v = 0.0;
        for i in 0..p {
            if beta[i] == 0.0 {
                continue;
            }
            let gb: f64 = (0..p).filter(|&k| beta[k] != 0.0).map(|k| self.gram[(i, k)] * beta[k]).sum();
            v += beta[i] * gb - 2.0 * beta[i] * corr[i] + 2.0 * weights[i] * beta[i].abs();
        }
        v
    }

    /// Minimizes the weighted lasso objective given `corr = B̃ a`.
    ///
    /// Cyclic coordinate descent in index order. Whenever the support and
    /// signs survive a full sweep unchanged, the KKT system on that support is
    /// solved directly and accepted if it satisfies every optimality
    /// condition and does not raise the objective.
    pub fn weighted_lasso(&self, corr: &[f64], weights: &[f64], init: &[f64]) -> Result<Vec<f64>> {
        let p = self.p();
        if corr.len() != p || weights.len() != p || init.len() != p {
            return Err(Error::Dimension(format!(
                "lasso inputs of lengths {}, {}, {} for {p} regressors",
                corr.len(),
                weights.len(),
                init.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Invalid(format!("lasso weight {w} is not a finite nonnegative number")));
        }
        let g = &self.gram;
        let mut beta = init.to_vec();
        let mut grad: Vec<f64> = corr.to_vec();
        for k in 0..p {
            if beta[k] != 0.0 {
                for i in 0..p {
                    grad[i] -= g[(i, k)] * beta[k];
                }
            }
        }

        let max_sweeps = 10 * p.max(1);
        let mut prev_pattern: Vec<i8> = signs(&beta);
        let mut max_change = f64::INFINITY;
        for _sweep in 0..max_sweeps {
            max_change = 0.0_f64;
            for i in 0..p {
                let gii = g[(i, i)];
                if gii <= 0.0 {
                    continue;
                }
                let z = grad[i] + gii * beta[i];
                let new = soft_threshold(z, weights[i]) / gii;
                let d = new - beta[i];
                if d != 0.0 {
                    beta[i] = new;
                    for k in 0..p {
                        grad[k] -= d * g[(k, i)];
                    }
                    max_change = max_change.max(d.abs());
                }
            }
            if max_change <= CD_TOL {
                return Ok(beta);
            }
            let pattern = signs(&beta);
            if pattern == prev_pattern {
                if let Some(exact) = self.solve_on_support(corr, weights, &pattern) {
                    if self.gram_objective(corr, &exact, weights)
                        <= self.gram_objective(corr, &beta, weights)
                    {
                        return Ok(exact);
                    }
                }
            }
            prev_pattern = pattern;
        }
        if max_change > CD_FAIL_TOL {
            return Err(Error::NonConvergence { sweeps: max_sweeps, max_change });
        }
        Ok(beta)
    }

    fn solve_on_support(&self, corr: &[f64], weights: &[f64], pattern: &[i8]) -> Option<Vec<f64>> {
        let p = self.p();
        let support: Vec<usize> = (0..p).filter(|&i| pattern[i] != 0).collect();
        let mut beta = vec![0.0; p];
        if !support.is_empty() {
            let m = support.len();
            let gaa = DMatrix::from_fn(m, m, |a, b| self.gram[(support[a], support[b])]);
            let rhs = DMatrix::from_fn(m, 1, |a, _| {
                let i = support[a];
                corr[i] - weights[i] * pattern[i] as f64
            });
            let sol = nalgebra::Cholesky::new(gaa)?.solve(&rhs);
            for (a, &i) in support.iter().enumerate() {
                let v = sol[(a, 0)];
                if !v.is_finite() || (v > 0.0) != (pattern[i] > 0) || v == 0.0 {
                    return None;
                }
                beta[i] = v;
            }
        }
        for i in 0..p {
            if pattern[i] != 0 {
                continue;
            }
            let z: f64 = corr[i] - support.iter().map(|&k| self.gram[(i, k)] * beta[k]).sum::<f64>();
            if z.abs() > weights[i] {
                return None;
            }
        }
        Some(beta)
    }
}

fn signs(beta: &[f64]) -> Vec<i8> {
    beta.iter()
        .map(|&b| if b > 0.0 { 1 } else if b < 0.0 { -1 } else { 0 })
        .collect()
}

pub fn soft_threshold(z: f64, w: f64) -> f64 {
    if z > w {
        z - w
    } else if z < -w {
        z + w
    } else {
        0.0
    }
}

/// Weighted lasso for a single response against the rows of `b_tilde`.
pub fn weighted_lasso_column(
    a_col: &[f64],
    b_tilde: &DMatrix<f64>,
    weights: &[f64],
    beta_init: &[f64],
) -> Result<Vec<f64>> {
    if a_col.len() != b_tilde.ncols() {
        return Err(Error::Dimension(format!(
            "response has {} observations, regressors {}",
            a_col.len(),
            b_tilde.ncols()
        )));
    }
    let design = Design::new(b_tilde);
    let corr = design.correlations(a_col);
    design.weighted_lasso(&corr, weights, beta_init)
}

/// One response column bound to a shared design.
#[derive(Debug, Clone)]
pub struct ColumnProblem<'a> {
    pub design: &'a Design,
    pub response: &'a [f64],
    corr: Vec<f64>,
}

impl<'a> ColumnProblem<'a> {
    pub fn new(design: &'a Design, response: &'a [f64]) -> Result<Self> {
        if response.len() != design.t() {
            return Err(Error::Dimension(format!(
                "response has {} observations, design {}",
                response.len(),
                design.t()
            )));
        }
        if design.t() < 3 {
            return Err(Error::InsufficientData(format!(
                "variance update needs T >= 3, got {}",
                design.t()
            )));
        }
        Ok(Self {
            corr: design.correlations(response),
            design,
            response,
        })
    }

    pub fn correlations(&self) -> &[f64] {
        &self.corr
    }

    pub fn initial_state(&self, sigma_init: SigmaInit) -> ColumnState {
        let mut s = ColumnState::initial(self.response, self.design.p());
        if sigma_init == SigmaInit::LeastSquaresResidual {
            if let Some(v) = self.design.residual_variance(self.response, &self.corr) {
                s.sigma2 = v.max(SIGMA2_FLOOR);
            }
        }
        s
    }
}

/// What one EM step saw and produced.
#[derive(Debug, Clone)]
pub struct StepTrace<'s> {
    pub previous: &'s ColumnState,
    pub next: &'s ColumnState,
    pub weights: &'s [f64],
}

fn step_with_weights(
    state: &ColumnState,
    problem: &ColumnProblem<'_>,
    prior: &ColumnPrior,
) -> Result<(ColumnState, Vec<f64>)> {
    let p = problem.design.p();
    let t = problem.design.t();
    let ColumnPrior { lambda0, lambda1, a, b } = *prior;

    let weights: Vec<f64> = state
        .beta
        .iter()
        .map(|&x| state.sigma2 * lambda_star(x, state.theta, lambda0, lambda1))
        .collect();
    let beta = problem.design.weighted_lasso(&problem.corr, &weights, &state.beta)?;

    let slab: f64 = beta.iter().map(|&x| p_star(x, state.theta, lambda0, lambda1)).sum();
    let theta = (a - 1.0 + slab) / (a + b + p as f64 - 2.0);

    let rss: f64 = problem
        .design
        .residuals(problem.response, &beta)
        .iter()
        .map(|e| e * e)
        .sum();
    let sigma2 = (rss / (t as f64 - 2.0)).max(SIGMA2_FLOOR);

    let last_delta = beta
        .iter()
        .zip(&state.beta)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();

    Ok((
        ColumnState {
            beta,
            theta,
            sigma2,
            iterations: state.iterations + 1,
            converged: false,
            last_delta,
        },
        weights,
    ))
}

/// A single EM iteration: weighted-lasso β, then θ, then σ².
pub fn em_column_step(
    state: &ColumnState,
    problem: &ColumnProblem<'_>,
    prior: &ColumnPrior,
) -> Result<ColumnState> {
    step_with_weights(state, problem, prior).map(|(s, _)| s)
}

pub fn run_em_column(
    init: ColumnState,
    problem: &ColumnProblem<'_>,
    prior: &ColumnPrior,
    k_max: usize,
    eps_cap: f64,
) -> Result<ColumnState> {
    run_em_column_traced(init, problem, prior, k_max, eps_cap, |_| {})
}

/// As [`run_em_column`], calling `on_step` after every iteration.
pub fn run_em_column_traced<F: FnMut(&StepTrace<'_>)>(
    init: ColumnState,
    problem: &ColumnProblem<'_>,
    prior: &ColumnPrior,
    k_max: usize,
    eps_cap: f64,
    mut on_step: F,
) -> Result<ColumnState> {
    if k_max == 0 {
        return Err(Error::Invalid("K_max must be at least 1".into()));
    }
    if !(eps_cap > 0.0) {
        return Err(Error::Invalid(format!("eps_cap must be > 0, got {eps_cap}")));
    }
    let mut state = init;
    state.converged = false;
    for _ in 0..k_max {
        let (mut next, weights) = step_with_weights(&state, problem, prior)?;
        next.converged = next.last_delta < eps_cap;
        on_step(&StepTrace { previous: &state, next: &next, weights: &weights });
        state = next;
        if state.converged {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn grid_min_1d(a: &[f64], b: &[f64], w: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut x = -2.0;
        while x <= 2.0 {
            let rss: f64 = a.iter().zip(b).map(|(a, b)| (a - x * b).powi(2)).sum();
            let f = rss + 2.0 * w * f64::abs(x);
            if f < best.0 {
                best = (f, x);
            }
            x += 1e-5;
        }
        best.1
    }

    #[test]
    fn single_coordinate_examples() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let beta = weighted_lasso_column(&[1.0, 1.0], &b, &[0.5], &[0.0]).unwrap();
        assert!((beta[0] - 0.75).abs() < 1e-15);
        assert!((beta[0] - grid_min_1d(&[1.0, 1.0], &[1.0, 1.0], 0.5)).abs() < 1e-4);

        // Σ a b = 0.3 below the threshold
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let beta = weighted_lasso_column(&[0.2, 0.2], &b, &[0.5], &[0.0]).unwrap();
        assert_eq!(beta[0], 0.0);
    }

    #[test]
    fn zero_weights_give_least_squares() {
        let mut g = GaussianStream::new(21);
        let (p, t) = (4, 30);
        let b = DMatrix::from_fn(p, t, |_, _| g.next_standard());
        let a: Vec<f64> = (0..t).map(|_| g.next_standard()).collect();
        let beta = weighted_lasso_column(&a, &b, &[0.0; 4], &[0.0; 4]).unwrap();
        let gram = &b * b.transpose();
        let rhs = &b * DMatrix::from_column_slice(t, 1, &a);
        let ols = gram.lu().solve(&rhs).unwrap();
        for i in 0..p {
            assert!((beta[i] - ols[(i, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_coordinates_satisfy_kkt_exactly() {
        let mut g = GaussianStream::new(4);
        let (p, t) = (6, 50);
        let b = DMatrix::from_fn(p, t, |_, _| g.next_standard());
        let a: Vec<f64> = (0..t).map(|_| g.next_standard()).collect();
        let w = vec![4.0; p];
        let beta = weighted_lasso_column(&a, &b, &w, &vec![0.0; p]).unwrap();
        let design = Design::new(&b);
        let e = design.residuals(&a, &beta);
        let z = design.correlations(&e);
        for i in 0..p {
            if beta[i] == 0.0 {
                assert!(z[i].abs() <= w[i] + 1e-9);
            } else {
                assert!((z[i] - w[i] * beta[i].signum()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn theta_and_sigma_updates() {
        // θ: a=b=1, p=2, p* = (0.2, 0.6) -> 0.8 / 2
        let (a, b, p) = (1.0, 1.0, 2.0);
        assert!(((a - 1.0 + 0.2 + 0.6) / (a + b + p - 2.0) - 0.4f64).abs() < 1e-15);

        // σ²: T=4 with residuals all 1 -> 4 / 2. Zero regressors give e = a.
        let b_t = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let design = Design::new(&b_t);
        let resp = [1.0, 1.0, 1.0, 1.0];
        let problem = ColumnProblem::new(&design, &resp).unwrap();
        let prior = ColumnPrior { lambda0: 10.0, lambda1: 1.0, a: 1.0, b: 1.0 };
        let init = ColumnState { beta: vec![0.0], theta: 0.5, sigma2: 1.0, iterations: 0, converged: false, last_delta: 0.0 };
        let next = em_column_step(&init, &problem, &prior).unwrap();
        assert_eq!(next.beta, vec![0.0]);
        assert!((next.sigma2 - 2.0).abs() < 1e-15);
        assert_eq!(next.last_delta, 0.0);
        // θ = (0 + p*(0; 1/2)) / (1 + 1 + 1 - 2) = 1/11
        assert!((next.theta - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn halting_controls() {
        let b_t = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let design = Design::new(&b_t);
        let resp = [1.0, 1.0, 1.0, 1.0];
        let problem = ColumnProblem::new(&design, &resp).unwrap();
        let prior = ColumnPrior { lambda0: 10.0, lambda1: 1.0, a: 1.0, b: 1.0 };
        // fixed point: β stays 0
        let out = run_em_column(ColumnState::initial(&resp, 1), &problem, &prior, 50, 1e-4).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);

        let mut g = GaussianStream::new(2);
        let b = DMatrix::from_fn(2, 50, |_, _| g.next_standard());
        let resp: Vec<f64> = (0..50).map(|t| 3.0 * b[(0, t)] + g.next_standard()).collect();
        let design = Design::new(&b);
        let problem = ColumnProblem::new(&design, &resp).unwrap();
        let prior = ColumnPrior { lambda0: 5.0, lambda1: 1.0, a: 1.0, b: 2.0 };
        let out = run_em_column(ColumnState::initial(&resp, 2), &problem, &prior, 50, 1e300).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn m_step_never_raises_its_objective() {
        let mut g = GaussianStream::new(9);
        let (p, t) = (2, 50);
        let b = DMatrix::from_fn(p, t, |_, _| g.next_standard());
        let resp: Vec<f64> = (0..t).map(|s| 2.0 * b[(0, s)] + 0.5 * g.next_standard()).collect();
        let design = Design::new(&b);
        let problem = ColumnProblem::new(&design, &resp).unwrap();
        let prior = ColumnPrior { lambda0: 20.0, lambda1: 1.0, a: 1.0, b: 2.0 };
        let init = ColumnState::initial(&resp, p);
        let out = run_em_column_traced(init, &problem, &prior, 100, 1e-8, |tr| {
            let before = design.lasso_objective(&resp, &tr.previous.beta, tr.weights);
            let after = design.lasso_objective(&resp, &tr.next.beta, tr.weights);
            assert!(after <= before + 1e-10);
        })
        .unwrap();
        assert!(out.theta >= 0.0 && out.theta <= 1.0);
        assert!(out.beta[0] > 1.5);
    }

    #[test]
    fn residual_variance_matches_direct_fit() {
        let mut g = GaussianStream::new(31);
        let (p, t) = (3, 40);
        let b = DMatrix::from_fn(p, t, |_, _| g.next_standard());
        let a: Vec<f64> = (0..t).map(|s| b[(1, s)] * 2.0 + g.next_standard()).collect();
        let beta = weighted_lasso_column(&a, &b, &[0.0; 3], &[0.0; 3]).unwrap();
        let design = Design::new(&b);
        let rss: f64 = design.residuals(&a, &beta).iter().map(|e| e * e).sum();
        let problem = ColumnProblem::new(&design, &a).unwrap();
        let init = problem.initial_state(SigmaInit::LeastSquaresResidual);
        assert!((init.sigma2 - rss / (t - p) as f64).abs() < 1e-10);
        let plain = problem.initial_state(SigmaInit::ResponseVariance);
        assert_eq!(plain, ColumnState::initial(&a, p));
        // too few observations: fall back
        let short = Design::new(&DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64));
        let resp = [1.0, 2.0, 0.0, 1.0, 3.0];
        let pr = ColumnProblem::new(&short, &resp).unwrap();
        assert_eq!(pr.initial_state(SigmaInit::LeastSquaresResidual), ColumnState::initial(&resp, 3));
    }

    #[test]
    fn bad_weights_rejected() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(weighted_lasso_column(&[1.0, 1.0], &b, &[-1.0], &[0.0]).is_err());
        assert!(weighted_lasso_column(&[1.0, 1.0], &b, &[f64::NAN], &[0.0]).is_err());
    }
}
