//! Jordan-block VAR(1) experiments with known cointegration rank.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_prep::{SeriesPanel, DEFAULT_RIDGE_TAU};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rank_search::{algorithm1, ensemble_rank, ensemble_seeds, PathRecord, SslConfig, Termination};
use crate::rng::{split_seed, GaussianStream};
use crate::stationarity::{screen_i1, AdfLags};

/// `Φ = (J(0, r) ⊕ I) + e_{r-1} e_rᵀ`, so that `Φ - I` has rank exactly `r`.
pub fn build_phi(p: usize, r: usize) -> Result<DMatrix<f64>> {
    if r >= p {
        return Err(Error::Domain(format!("rank {r} must be below dimension {p}")));
    }
    let mut phi = DMatrix::identity(p, p);
    if r > 0 {
        for i in 0..r {
            phi[(i, i)] = 0.0;
        }
        // superdiagonal of the nilpotent block plus the link into the identity block
        for i in 0..r {
            phi[(i, i + 1)] = 1.0;
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub p: usize,
    pub r: usize,
    pub sigma: f64,
    /// Number of time points generated after the zero start.
    pub t: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r >= self.p {
            return Err(Error::Domain(format!("rank {} must be below dimension {}", self.r, self.p)));
        }
        if self.t < 2 {
            return Err(Error::Invalid(format!("need at least 2 time points, got {}", self.t)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("noise scale must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Draws `Y_1..Y_T` from `Y_t = Φ Y_{t-1} + ε_t` with `Y_0 = 0`.
///
/// Noise is drawn time-major: all `p` coordinates of `ε_1`, then `ε_2`, ...
pub fn simulate_var(spec: &DgpSpec) -> Result<SeriesPanel> {
    spec.validate()?;
    let phi = build_phi(spec.p, spec.r)?;
    simulate_with(&phi, spec.sigma, spec.t, spec.seed)
}

fn simulate_with(phi: &DMatrix<f64>, sigma: f64, t: usize, seed: u64) -> Result<SeriesPanel> {
    let p = phi.nrows();
    let mut g = GaussianStream::new(seed);
    let mut y = DMatrix::zeros(p, t);
    let mut prev = nalgebra::DVector::zeros(p);
    for s in 0..t {
        let mut next = phi * &prev;
        for j in 0..p {
            next[j] += g.next_normal(sigma);
        }
        y.set_column(s, &next);
        prev = next;
    }
    SeriesPanel::from_values(y)
}

/// Positive prices carrying the cointegration structure of the DGP plus a
/// common market random walk. The market factor is in every asset
/// equally, so it cancels from every cointegrating combination (rows of
/// `Φ - I` sum to zero) but not from an equal-weight basket.
pub fn synthetic_prices(spec: &DgpSpec, market_sigma: f64, base: f64) -> Result<SeriesPanel> {
    let panel = simulate_var(spec)?;
    let mut g = GaussianStream::new(split_seed(spec.seed, u64::MAX));
    let mut m = 0.0;
    let mut v = panel.values.clone();
    for s in 0..spec.t {
        m += g.next_normal(market_sigma);
        for j in 0..spec.p {
            v[(j, s)] += base + m;
        }
    }
    if let Some(idx) = v.iter().position(|x| *x <= 0.0) {
        return Err(Error::Domain(format!(
            "synthetic price at flat index {idx} is not positive; raise the base level"
        )));
    }
    SeriesPanel::from_values(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub p: usize,
    pub r: usize,
    pub sigma: f64,
    pub t: usize,
    pub samples: usize,
    pub algorithm: Algorithm,
    /// Randomized runs averaged per sample (second algorithm only).
    pub repetitions: usize,
    pub base_seed: u64,
    /// Share of coordinates that must pass the I(1) screen for a draw to be kept.
    pub i1_fraction: f64,
    pub max_consecutive_rejections: usize,
    pub ridge_tau: f64,
}

impl StudySpec {
    pub fn new(p: usize, r: usize, t: usize, samples: usize, algorithm: Algorithm) -> Self {
        Self {
            p,
            r,
            sigma: 1.0,
            t,
            samples,
            algorithm,
            repetitions: 100,
            base_seed: 0,
            i1_fraction: 0.95,
            max_consecutive_rejections: 1000,
            ridge_tau: DEFAULT_RIDGE_TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        DgpSpec { p: self.p, r: self.r, sigma: self.sigma, t: self.t, seed: 0 }.validate()?;
        if self.samples == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        if self.algorithm == Algorithm::Two && self.repetitions == 0 {
            return Err(Error::Invalid("need at least one repetition".into()));
        }
        if !(self.i1_fraction > 0.0 && self.i1_fraction <= 1.0) {
            return Err(Error::Invalid(format!("i1_fraction must lie in (0, 1], got {}", self.i1_fraction)));
        }
        if self.max_consecutive_rejections == 0 {
            return Err(Error::Invalid("max_consecutive_rejections must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    /// Seed of the accepted draw.
    pub seed: u64,
    pub rejected_seeds: Vec<u64>,
    pub r_hat: f64,
    /// Ranks of each run (one entry for the first algorithm).
    pub run_ranks: Vec<usize>,
    pub iterations: usize,
    pub termination: Termination,
    #[serde(skip)]
    pub path: Vec<PathRecord>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyResult {
    pub spec: StudySpec,
    pub config: SslConfig,
    pub estimates: Vec<f64>,
    pub pct_within_p100: f64,
    pub pct_within_p50: f64,
    pub pct_exact: f64,
    pub rejected_draws: usize,
    pub samples: Vec<SampleRecord>,
}

/// Percentage of estimates with `|r̂ - r| <= width` (small slack for the
/// decimal width).
pub fn band_percentage(estimates: &[f64], r: usize, width: f64) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    let hits = estimates.iter().filter(|&&e| (e - r as f64).abs() <= width + 1e-9).count();
    100.0 * hits as f64 / estimates.len() as f64
}

/// Draws sample `index`: seeds `base + index·stride + k` for `k = 0, 1, ...`
/// until one passes the I(1) screen.
fn draw_accepted(spec: &StudySpec, index: usize) -> Result<(SeriesPanel, u64, Vec<u64>)> {
    let stride = spec.max_consecutive_rejections as u64;
    let first = spec.base_seed.wrapping_add(index as u64 * stride);
    let mut rejected = Vec::new();
    for k in 0..stride {
        let seed = first.wrapping_add(k);
        let panel = simulate_var(&DgpSpec { p: spec.p, r: spec.r, sigma: spec.sigma, t: spec.t, seed })?;
        let screen = screen_i1(&panel, AdfLags::Auto, Execution::Sequential);
        if screen.retained.len() as f64 >= spec.i1_fraction * spec.p as f64 {
            return Ok((panel, seed, rejected));
        }
        rejected.push(seed);
    }
    Err(Error::RejectionCap {
        consecutive: spec.max_consecutive_rejections,
        last_seed: first.wrapping_add(stride - 1),
    })
}

fn run_sample(spec: &StudySpec, config: &SslConfig, index: usize) -> Result<SampleRecord> {
    let started = std::time::Instant::now();
    let (panel, seed, rejected_seeds) = draw_accepted(spec, index)?;
    let system = crate::data_prep::decompose(&panel, spec.ridge_tau)?;
    let mut cfg = config.clone();
    cfg.seed = seed;
    let (r_hat, run_ranks, iterations, termination, path) = match spec.algorithm {
        Algorithm::One => {
            let run = algorithm1(&system, &cfg)?;
            (run.final_rank as f64, vec![run.final_rank], run.path.len(), run.termination, run.path)
        }
        Algorithm::Two => {
            let seeds = ensemble_seeds(seed, spec.repetitions);
            let ens = ensemble_rank(&system, &cfg, &seeds)?;
            let first = &ens.runs[0];
            (ens.mean, ens.ranks.clone(), first.path.len(), first.termination, first.path.clone())
        }
    };
    Ok(SampleRecord {
        index,
        seed,
        rejected_seeds,
        r_hat,
        run_ranks,
        iterations,
        termination,
        path,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

/// Generates `samples` accepted draws, estimates each rank and scores the
/// estimates against the true rank.
pub fn run_sim_study(spec: &StudySpec, config: &SslConfig) -> Result<SimStudyResult> {
    spec.validate()?;
    config.validate()?;
    // samples carry the parallelism; each estimation runs on one worker
    let mut inner = config.clone();
    inner.execution = Execution::Sequential;
    let samples = par::map_range(config.execution, spec.samples, |i| run_sample(spec, &inner, i));
    let samples: Vec<SampleRecord> = samples.into_iter().collect::<Result<_>>()?;
    let estimates: Vec<f64> = samples.iter().map(|s| s.r_hat).collect();
    let p = spec.p as f64;
    Ok(SimStudyResult {
        spec: spec.clone(),
        config: config.clone(),
        pct_within_p100: band_percentage(&estimates, spec.r, p / 100.0),
        pct_within_p50: band_percentage(&estimates, spec.r, p / 50.0),
        pct_exact: band_percentage(&estimates, spec.r, 0.0),
        rejected_draws: samples.iter().map(|s| s.rejected_seeds.len()).sum(),
        estimates,
        samples,
    })
}
