//! Augmented Dickey–Fuller tests and I(1) screening.
//!
//! The regression is `Δy_t = c + ρ y_{t-1} + Σ_{i=1..k} φ_i Δy_{t-i} + e_t`
//! (constant, no trend). In automatic mode `k` starts at Schwert's bound
//! `⌊12 (n/100)^{1/4}⌋` and drops the top lag while its t-ratio is below the
//! one-sided 5% normal quantile; the lag search uses a common sample and the
//! chosen order is refit on all available observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_prep::SeriesPanel;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// One-sided 5% standard normal quantile.
const LAG_T_CUTOFF: f64 = 1.644_853_626_951_472_2;
/// Minimum observations in the final regression.
pub const MIN_ADF_OBS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdfLags {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub nobs: usize,
    pub critical_value_5pct: f64,
    pub reject_unit_root: bool,
}

/// MacKinnon (2010) response surface, constant-only case, 5% level.
pub fn critical_value_5pct(nobs: usize) -> f64 {
    let n = nobs as f64;
    -2.86154 - 2.8903 / n - 4.234 / (n * n) - 40.040 / (n * n * n)
}

/// `⌊12 (n/100)^{1/4}⌋` capped so the regression keeps enough degrees of freedom.
pub fn schwert_max_lag(n: usize) -> usize {
    let bound = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    bound.min((n / 2).saturating_sub(2))
}

struct Ols {
    t_values: Vec<f64>,
}

fn ols_t_values(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} regressors")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| !(r[(i, i)].abs() > 1e-10 * max_diag)) || max_diag == 0.0 {
        return Err(Error::Singular("ADF regressors are collinear (constant series?)".into()));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("ADF regression".into()))?;
    let resid = y - x * &beta;
    let s2 = resid.norm_squared() / (n - k) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("ADF regression".into()))?;
    let t_values = (0..k)
        .map(|i| {
            // diag of (XᵀX)⁻¹ = R⁻¹R⁻ᵀ is the squared row norm of R⁻¹
            let v = r_inv.row(i).norm_squared();
            beta[i] / (s2 * v).sqrt()
        })
        .collect();
    Ok(Ols { t_values })
}

/// Design for lag order `k` on the last `nobs` differences: columns are
/// `y_{t-1}`, `Δy_{t-1}..Δy_{t-k}`, constant.
fn design(y: &[f64], dy: &[f64], k: usize, nobs: usize) -> (DMatrix<f64>, DVector<f64>) {
    let start = dy.len() - nobs;
    let x = DMatrix::from_fn(nobs, k + 2, |row, col| {
        let t = start + row;
        match col {
            0 => y[t],
            c if c <= k => dy[t - c],
            _ => 1.0,
        }
    });
    (x, DVector::from_fn(nobs, |row, _| dy[start + row]))
}

pub fn adf_test(y: &[f64], lags: AdfLags) -> Result<AdfResult> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col: i });
    }
    let n = y.len();
    if n < MIN_ADF_OBS + 2 {
        return Err(Error::InsufficientData(format!("ADF needs at least {} points, got {n}", MIN_ADF_OBS + 2)));
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let k = match lags {
        AdfLags::Fixed(k) => k,
        AdfLags::Auto => {
            let max = schwert_max_lag(n);
            if dy.len() <= max + MIN_ADF_OBS {
                return Err(Error::InsufficientData(format!("{n} points leave too few observations for {max} lags")));
            }
            let common = dy.len() - max;
            let mut chosen = 0;
            for k in (1..=max).rev() {
                let (x, v) = design(y, &dy, k, common);
                let fit = ols_t_values(&x, &v)?;
                if fit.t_values[k].abs() >= LAG_T_CUTOFF {
                    chosen = k;
                    break;
                }
            }
            chosen
        }
    };
    if dy.len() < k + MIN_ADF_OBS {
        return Err(Error::InsufficientData(format!(
            "{} differences leave fewer than {MIN_ADF_OBS} observations at lag {k}",
            dy.len()
        )));
    }
    let nobs = dy.len() - k;
    let (x, v) = design(y, &dy, k, nobs);
    let statistic = ols_t_values(&x, &v)?.t_values[0];
    if !statistic.is_finite() {
        return Err(Error::Singular("ADF regression fits exactly".into()));
    }
    let critical_value_5pct = critical_value_5pct(nobs);
    Ok(AdfResult {
        statistic,
        lags_used: k,
        nobs,
        critical_value_5pct,
        reject_unit_root: statistic < critical_value_5pct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScreen {
    pub index: usize,
    pub label: String,
    pub levels: Option<AdfResult>,
    pub differences: Option<AdfResult>,
    pub i1: bool,
    /// Why the series was excluded without a decision.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub retained: Vec<usize>,
    pub series: Vec<SeriesScreen>,
}

fn screen_one(panel: &SeriesPanel, j: usize, lags: AdfLags) -> SeriesScreen {
    let y = panel.series(j);
    let mut out = SeriesScreen {
        index: j,
        label: panel.label(j),
        levels: None,
        differences: None,
        i1: false,
        error: None,
    };
    let levels = match adf_test(&y, lags) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(format!("levels: {e}"));
            return out;
        }
    };
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let diffs = adf_test(&dy, lags);
    out.i1 = !levels.reject_unit_root && matches!(&diffs, Ok(d) if d.reject_unit_root);
    out.levels = Some(levels);
    match diffs {
        Ok(d) => out.differences = Some(d),
        Err(e) => out.error = Some(format!("differences: {e}")),
    }
    out
}

/// A series is I(1) when its levels keep the unit root and its first
/// differences reject it. Series whose tests fail are excluded and carry the
/// reason.
pub fn screen_i1(panel: &SeriesPanel, lags: AdfLags, exec: Execution) -> ScreenReport {
    let series = par::map_range(exec, panel.n_vars(), |j| screen_one(panel, j, lags));
    ScreenReport {
        retained: series.iter().filter(|s| s.i1).map(|s| s.index).collect(),
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn walk(seed: u64, n: usize) -> Vec<f64> {
        let mut g = GaussianStream::new(seed);
        let mut y = 0.0;
        (0..n).map(|_| {
            y += g.next_standard();
            y
        })
        .collect()
    }

    fn ar(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut g = GaussianStream::new(seed);
        let mut y = 0.0;
        (0..n).map(|_| {
            y = phi * y + g.next_standard();
            y
        })
        .collect()
    }

    #[test]
    fn critical_value_approaches_asymptote() {
        assert!((critical_value_5pct(1_000_000) + 2.86154).abs() < 1e-5);
        assert!(critical_value_5pct(100) < critical_value_5pct(1000));
    }

    #[test]
    fn schwert_bound() {
        assert_eq!(schwert_max_lag(100), 12);
        assert_eq!(schwert_max_lag(500), 17);
        assert_eq!(schwert_max_lag(30), 8);
    }

    #[test]
    fn decisions() {
        assert!(!adf_test(&walk(11, 500), AdfLags::Auto).unwrap().reject_unit_root);
        assert!(adf_test(&ar(12, 500, 0.5), AdfLags::Auto).unwrap().reject_unit_root);
        assert!(matches!(adf_test(&[3.0; 100], AdfLags::Auto), Err(Error::Singular(_))));
        assert!(matches!(adf_test(&[1.0; 10], AdfLags::Auto), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn invariant_to_scale_and_shift() {
        let y = walk(5, 300);
        let base = adf_test(&y, AdfLags::Auto).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| 37.5 * v).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v - 1234.0).collect();
        for other in [scaled, shifted] {
            let r = adf_test(&other, AdfLags::Auto).unwrap();
            assert_eq!(r.lags_used, base.lags_used);
            assert!((r.statistic - base.statistic).abs() < 1e-8);
        }
    }

    #[test]
    fn screening_examples() {
        let n = 300;
        let walks = DMatrix::from_fn(50, n, |_, _| 0.0);
        let mut walks = walks;
        for j in 0..50 {
            let w = walk(1000 + j as u64, n);
            walks.row_mut(j).copy_from_slice(&w);
        }
        let panel = SeriesPanel::from_values(walks).unwrap();
        let rep = screen_i1(&panel, AdfLags::Auto, Execution::Parallel);
        assert!(rep.retained.len() >= 45, "{} of 50 retained", rep.retained.len());

        let mut g = GaussianStream::new(77);
        let noise = DMatrix::from_fn(10, n, |_, _| g.next_standard());
        let rep = screen_i1(&SeriesPanel::from_values(noise).unwrap(), AdfLags::Auto, Execution::Sequential);
        assert!(rep.retained.is_empty());

        let mut i2 = DMatrix::zeros(5, n);
        for j in 0..5 {
            let w = walk(50 + j as u64, n);
            let mut acc = 0.0;
            for (t, v) in w.iter().enumerate() {
                acc += v;
                i2[(j, t)] = acc;
            }
        }
        let rep = screen_i1(&SeriesPanel::from_values(i2).unwrap(), AdfLags::Auto, Execution::Sequential);
        assert!(rep.retained.is_empty());
    }
}
