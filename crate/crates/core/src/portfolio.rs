//! Cointegration portfolios: reconstruction of Π̂, L1-normalized weights and
//! train/test volatility against an equal-weight basket.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_prep::{DecomposedSystem, SeriesPanel};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rank_search::RankRun;

/// Default number of largest weights listed per portfolio.
pub const DEFAULT_TOP_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReturnConvention {
    /// `v_t - v_{t-1}`: return per unit of gross exposure, defined for
    /// long-short values that cross zero.
    #[default]
    Arithmetic,
    /// `v_t / v_{t-1} - 1`, for long-only series.
    Ratio,
}

/// Divides every variable by its first observation.
pub fn normalize_prices(panel: &SeriesPanel) -> Result<SeriesPanel> {
    let mut v = panel.values.clone();
    for j in 0..panel.n_vars() {
        let first = v[(j, 0)];
        if first == 0.0 {
            return Err(Error::ZeroInitialPrice { index: j });
        }
        v.row_mut(j).scale_mut(1.0 / first);
    }
    SeriesPanel::new(v, panel.labels.clone(), panel.dates.clone())
}

/// `Π̂ = (S̃ R̂)ᵀ`.
pub fn reconstruct_pi(r_hat: &DMatrix<f64>, s_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s_tilde.ncols() != r_hat.nrows() {
        return Err(Error::Dimension(format!(
            "S is {:?} but R is {:?}",
            s_tilde.shape(),
            r_hat.shape()
        )));
    }
    Ok((s_tilde * r_hat).transpose())
}

/// Maps coefficients fitted on the standardized regressors back to the
/// rotated raw levels: row `i` is multiplied by `√T / σ_i`. The intercept
/// absorbed by centering is dropped.
pub fn unstandardize(r_hat: &DMatrix<f64>, system: &DecomposedSystem) -> Result<DMatrix<f64>> {
    let p = system.p();
    if r_hat.shape() != (p, p) {
        return Err(Error::Dimension(format!("R is {:?}, expected {p}x{p}", r_hat.shape())));
    }
    let root_t = (system.t() as f64).sqrt();
    Ok(DMatrix::from_fn(p, p, |i, j| r_hat[(i, j)] * root_t / system.sigma_b[i]))
}

/// Π̂ in level units from an estimate on the standardized system.
pub fn pi_from_estimate(r_hat: &DMatrix<f64>, system: &DecomposedSystem) -> Result<DMatrix<f64>> {
    reconstruct_pi(&unstandardize(r_hat, system)?, &system.s_tilde)
}

/// Portfolios implied by a rank-search run on `system`, which was built from
/// the first `split_index` time points of the panel the weights apply to.
pub fn portfolios_from_run(
    run: &RankRun,
    system: &DecomposedSystem,
    labels: Vec<String>,
    split_index: usize,
) -> Result<PortfolioSet> {
    PortfolioSet::new(pi_from_estimate(&run.final_r, system)?, labels, split_index)
}

/// One weight vector per nonzero row of `pi_hat`, scaled to unit L1 norm.
/// Returns the source row indices alongside.
pub fn extract_weights(pi_hat: &DMatrix<f64>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (i, row) in pi_hat.row_iter().enumerate() {
        let l1: f64 = row.iter().map(|x| x.abs()).sum();
        if l1 > 0.0 {
            rows.push(i);
            weights.push(row.iter().map(|x| x / l1).collect());
        }
    }
    (rows, weights)
}

pub fn portfolio_values(alpha: &[f64], panel: &SeriesPanel) -> Result<Vec<f64>> {
    if alpha.len() != panel.n_vars() {
        return Err(Error::Dimension(format!(
            "{} weights for {} assets",
            alpha.len(),
            panel.n_vars()
        )));
    }
    Ok(panel
        .values
        .column_iter()
        .map(|c| c.iter().zip(alpha).map(|(y, a)| y * a).sum())
        .collect())
}

pub fn returns(values: &[f64], convention: ReturnConvention) -> Result<Vec<f64>> {
    values
        .windows(2)
        .enumerate()
        .map(|(t, w)| match convention {
            ReturnConvention::Arithmetic => Ok(w[1] - w[0]),
            ReturnConvention::Ratio if w[0] == 0.0 => Err(Error::Domain(format!(
                "ratio return undefined at t={}: value is zero",
                t + 1
            ))),
            ReturnConvention::Ratio => Ok(w[1] / w[0] - 1.0),
        })
        .collect()
}

pub fn portfolio_returns(alpha: &[f64], panel: &SeriesPanel, convention: ReturnConvention) -> Result<Vec<f64>> {
    returns(&portfolio_values(alpha, panel)?, convention)
}

pub fn equal_weight_values(panel: &SeriesPanel) -> Vec<f64> {
    let p = panel.n_vars() as f64;
    panel.values.column_iter().map(|c| c.sum() / p).collect()
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sample standard deviations (in percent) of `returns[..split]` and
/// `returns[split..]`.
pub fn evaluate_volatility(returns: &[f64], split: usize) -> Result<(f64, f64)> {
    if split < 2 || returns.len() < split + 2 {
        return Err(Error::InsufficientData(format!(
            "split {split} of {} returns leaves a segment with fewer than 2",
            returns.len()
        )));
    }
    Ok((100.0 * sample_sd(&returns[..split]), 100.0 * sample_sd(&returns[split..])))
}

/// Returns index that separates train from test when the first `split_point`
/// time points are the training window.
fn return_split(split_point: usize) -> usize {
    split_point.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityRow {
    pub name: String,
    pub train_vol_pct: f64,
    pub test_vol_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityReport {
    pub portfolio_convention: ReturnConvention,
    pub benchmark_convention: ReturnConvention,
    /// Time points in the training window; weights are held fixed after it.
    pub split_index: usize,
    pub portfolios: Vec<VolatilityRow>,
    pub equal_weight: VolatilityRow,
    pub index: Option<VolatilityRow>,
}

impl VolatilityReport {
    /// Portfolio with the lowest training volatility.
    pub fn best(&self) -> Option<&VolatilityRow> {
        self.portfolios
            .iter()
            .min_by(|a, b| a.train_vol_pct.total_cmp(&b.train_vol_pct))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSet {
    pub pi_hat: DMatrix<f64>,
    /// Row of `pi_hat` behind each weight vector.
    pub rows: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub split_index: usize,
}

impl PortfolioSet {
    pub fn new(pi_hat: DMatrix<f64>, labels: Vec<String>, split_index: usize) -> Result<Self> {
        if pi_hat.nrows() != pi_hat.ncols() || pi_hat.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "Π̂ is {:?} for {} assets",
                pi_hat.shape(),
                labels.len()
            )));
        }
        crate::linalg::check_finite(&pi_hat)?;
        let (rows, weights) = extract_weights(&pi_hat);
        Ok(Self { pi_hat, rows, weights, labels, split_index })
    }

    pub fn name(&self, k: usize) -> String {
        format!("portfolio_{}", self.rows[k] + 1)
    }

    /// The `k` largest-magnitude weights of portfolio `which`, largest first.
    pub fn top_weights(&self, which: usize, k: usize) -> Vec<(String, f64)> {
        let w = &self.weights[which];
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (self.labels[i].clone(), w[i])).collect()
    }

    /// Value series of every portfolio on `panel`.
    pub fn values(&self, panel: &SeriesPanel, exec: Execution) -> Result<Vec<Vec<f64>>> {
        par::map(exec, &self.weights, |w| portfolio_values(w, panel)).into_iter().collect()
    }

    /// Train/test volatility of every portfolio and of the benchmarks on a
    /// normalized panel. `index` is an optional normalized benchmark series.
    pub fn evaluate(
        &self,
        panel: &SeriesPanel,
        index: Option<&[f64]>,
        convention: ReturnConvention,
        benchmark_convention: ReturnConvention,
        exec: Execution,
    ) -> Result<VolatilityReport> {
        if panel.n_vars() != self.labels.len() {
            return Err(Error::Dimension(format!(
                "panel has {} assets, portfolios have {}",
                panel.n_vars(),
                self.labels.len()
            )));
        }
        let split = return_split(self.split_index);
        let row = |name: String, values: &[f64], conv| -> Result<VolatilityRow> {
            let (train, test) = evaluate_volatility(&returns(values, conv)?, split)?;
            Ok(VolatilityRow { name, train_vol_pct: train, test_vol_pct: test })
        };
        let values = self.values(panel, exec)?;
        let portfolios = values
            .iter()
            .enumerate()
            .map(|(k, v)| row(self.name(k), v, convention))
            .collect::<Result<Vec<_>>>()?;
        let equal_weight = row("equal_weight".into(), &equal_weight_values(panel), benchmark_convention)?;
        let index = match index {
            Some(ix) if ix.len() != panel.n_points() => {
                return Err(Error::Dimension(format!(
                    "index has {} points, panel has {}",
                    ix.len(),
                    panel.n_points()
                )))
            }
            Some(ix) => Some(row("index".into(), ix, benchmark_convention)?),
            None => None,
        };
        Ok(VolatilityReport {
            portfolio_convention: convention,
            benchmark_convention,
            split_index: self.split_index,
            portfolios,
            equal_weight,
            index,
        })
    }
}

/// Normalizes a series by its first value.
pub fn normalize_series(x: &[f64]) -> Result<Vec<f64>> {
    match x.first() {
        None => Err(Error::InsufficientData("empty series".into())),
        Some(&f) if f == 0.0 => Err(Error::ZeroInitialPrice { index: 0 }),
        Some(&f) => Ok(x.iter().map(|v| v / f).collect()),
    }
}
