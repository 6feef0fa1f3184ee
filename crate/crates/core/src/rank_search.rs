//! Rank search along a spike-penalty ladder.
//!
//! [`algorithm1`] raises one shared λ₀ for every column until the count of
//! nonzero columns has repeated `n_r` times. [`algorithm2`] runs the same
//! ladder until the rank falls below a fraction of `p`, then bumps the λ₀ of
//! one randomly drawn surviving column at a time. [`ensemble_rank`] repeats
//! the randomized phase over many seeds.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_prep::DecomposedSystem;
use crate::em_solver::{run_em_column, ColumnPrior, ColumnProblem, ColumnState, Design, SigmaInit};
use crate::error::{Error, Result};
use crate::linalg::numerical_rank;
use crate::par::{self, Execution};
use crate::rng::{split_seed, uniform_stream};

/// How λ values in [`SslConfig`] are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaUnits {
    /// Used as given.
    Absolute,
    /// Multiplied by `T / σ̄`, with σ̄ the RMS of the response matrix, and
    /// `eps_cap` by the reciprocal. A null regressor's correlation with a
    /// response is of order `T σ`, so one unit of λ puts the spike threshold
    /// at the noise level regardless of sample length or data scale.
    #[default]
    NoiseScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub lambda1: f64,
    pub lambda0_init: f64,
    /// Global ladder step.
    pub delta_lambda: f64,
    /// Per-column step of the randomized phase; `delta_lambda / p` if unset.
    /// Each pick raises one column by this times the pool size, so the
    /// phase behaves like a ladder with this step and needs a long buffer.
    pub delta_lambda_small: Option<f64>,
    /// Beta prior shape per column (one value broadcasts); 1 if unset.
    pub a: Option<Vec<f64>>,
    /// Beta prior shape per column (one value broadcasts); `p` if unset.
    pub b: Option<Vec<f64>>,
    pub k_max: usize,
    pub eps_cap: f64,
    /// Length of the termination buffer.
    pub n_r: usize,
    /// The randomized phase starts once the rank is below this fraction of `p`.
    pub sparsity_fraction: f64,
    pub max_ladder_steps: usize,
    pub warm_start: bool,
    pub sigma_init: SigmaInit,
    pub seed: u64,
    pub lambda_units: LambdaUnits,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda0_init: 1.0,
            delta_lambda: 0.15,
            delta_lambda_small: Some(0.12),
            a: None,
            b: None,
            k_max: 100,
            eps_cap: 1e-4,
            n_r: 30,
            sparsity_fraction: 0.5,
            max_ladder_steps: 5000,
            warm_start: false,
            sigma_init: SigmaInit::default(),
            seed: 0,
            lambda_units: LambdaUnits::NoiseScaled,
            execution: Execution::default(),
        }
    }
}

/// Config with defaults filled in and units converted for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub scale: f64,
    pub lambda1: f64,
    pub lambda0_init: f64,
    pub delta_lambda: f64,
    pub delta_lambda_small: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k_max: usize,
    pub eps_cap: f64,
    pub n_r: usize,
    pub sparsity_fraction: f64,
    pub max_ladder_steps: usize,
    pub warm_start: bool,
    pub sigma_init: SigmaInit,
}

fn per_column(v: &Option<Vec<f64>>, default: f64, p: usize, name: &str) -> Result<Vec<f64>> {
    match v.as_deref() {
        None => Ok(vec![default; p]),
        Some([x]) => Ok(vec![*x; p]),
        Some(xs) if xs.len() == p => Ok(xs.to_vec()),
        Some(xs) => Err(Error::Dimension(format!("{name} has {} entries for {p} columns", xs.len()))),
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, name: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be a positive number, got {x}")))
            }
        };
        pos(self.lambda1, "lambda1")?;
        pos(self.lambda0_init, "lambda0_init")?;
        pos(self.delta_lambda, "delta_lambda")?;
        if let Some(d) = self.delta_lambda_small {
            pos(d, "delta_lambda_small")?;
        }
        pos(self.eps_cap, "eps_cap")?;
        if self.lambda0_init < self.lambda1 {
            return Err(Error::Invalid(format!(
                "lambda0_init {} is below lambda1 {}",
                self.lambda0_init, self.lambda1
            )));
        }
        if self.n_r == 0 || self.k_max == 0 || self.max_ladder_steps == 0 {
            return Err(Error::Invalid("n_r, k_max and max_ladder_steps must be at least 1".into()));
        }
        if !(self.sparsity_fraction > 0.0 && self.sparsity_fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "sparsity_fraction must lie in (0, 1], got {}",
                self.sparsity_fraction
            )));
        }
        for v in self.a.iter().chain(self.b.iter()).flatten() {
            if !(*v >= 1.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("Beta prior shapes must be >= 1, got {v}")));
            }
        }
        Ok(())
    }

    pub fn resolved(&self, system: &DecomposedSystem) -> Result<ResolvedConfig> {
        self.validate()?;
        let p = system.p();
        let scale = match self.lambda_units {
            LambdaUnits::Absolute => 1.0,
            LambdaUnits::NoiseScaled => {
                let s = system.response_scale();
                if !(s > 0.0) {
                    return Err(Error::Invalid("response matrix is identically zero".into()));
                }
                system.t() as f64 / s
            }
        };
        let delta_lambda_small = self.delta_lambda_small.unwrap_or(self.delta_lambda / p as f64);
        Ok(ResolvedConfig {
            scale,
            lambda1: self.lambda1 * scale,
            lambda0_init: self.lambda0_init * scale,
            delta_lambda: self.delta_lambda * scale,
            delta_lambda_small: delta_lambda_small * scale,
            a: per_column(&self.a, 1.0, p, "a")?,
            b: per_column(&self.b, p as f64, p, "b")?,
            k_max: self.k_max,
            eps_cap: self.eps_cap / scale,
            n_r: self.n_r,
            sparsity_fraction: self.sparsity_fraction,
            max_ladder_steps: self.max_ladder_steps,
            warm_start: self.warm_start,
            sigma_init: self.sigma_init,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BufferAgreement,
    RankZero,
    LadderCap,
}

/// One iteration of either algorithm. λ₀ values are in the config's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub iteration: usize,
    pub phase: u8,
    /// Column refit in a randomized step.
    pub column: Option<usize>,
    pub lambda0_min: f64,
    pub lambda0_mean: f64,
    pub lambda0_max: f64,
    pub r_hat: usize,
    pub active_set: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRun {
    pub path: Vec<PathRecord>,
    pub final_r: DMatrix<f64>,
    pub final_rank: usize,
    pub rank_info: RankInfo,
    pub termination: Termination,
    pub seed: u64,
    pub active_set_history: Vec<usize>,
    /// Final λ₀ per column, in the config's units.
    pub lambda0: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankInfo {
    /// Columns with any nonzero entry.
    pub column_rank: usize,
    /// Singular values above `1e-8` of the largest.
    pub svd_rank: usize,
    pub disagrees: bool,
}

pub const SVD_RANK_TOL: f64 = 1e-8;

pub fn extract_rank(r_hat: &DMatrix<f64>) -> RankInfo {
    let column_rank = nonzero_columns(r_hat).len();
    let svd_rank = if column_rank == 0 { 0 } else { numerical_rank(r_hat, SVD_RANK_TOL) };
    RankInfo {
        column_rank,
        svd_rank,
        disagrees: column_rank != svd_rank,
    }
}

fn nonzero_columns(r: &DMatrix<f64>) -> Vec<usize> {
    (0..r.ncols()).filter(|&j| r.column(j).iter().any(|&x| x != 0.0)).collect()
}

/// State shared by both algorithms while walking the ladder.
#[derive(Debug, Clone)]
struct Ladder<'a> {
    system: &'a DecomposedSystem,
    design: &'a Design,
    cfg: &'a ResolvedConfig,
    execution: Execution,
    lambda0: Vec<f64>,
    states: Vec<ColumnState>,
    buffer: VecDeque<usize>,
    r_hat: usize,
    path: Vec<PathRecord>,
    active_set_history: Vec<usize>,
}

impl<'a> Ladder<'a> {
    fn new(system: &'a DecomposedSystem, design: &'a Design, cfg: &'a ResolvedConfig, execution: Execution) -> Self {
        let p = system.p();
        Self {
            system,
            design,
            cfg,
            execution,
            lambda0: vec![cfg.lambda0_init; p],
            states: (0..p).map(|j| ColumnState::initial(&system.response(j), p)).collect(),
            buffer: std::iter::repeat_n(p + 1, cfg.n_r).collect(),
            r_hat: p,
            path: Vec::new(),
            active_set_history: Vec::new(),
        }
    }

    fn fit(&self, j: usize, lambda0: f64) -> Result<ColumnState> {
        let response = self.system.response(j);
        let problem = ColumnProblem::new(self.design, &response)?;
        let prior = ColumnPrior {
            lambda0,
            lambda1: self.cfg.lambda1,
            a: self.cfg.a[j],
            b: self.cfg.b[j],
        };
        let init = if self.cfg.warm_start {
            self.states[j].clone()
        } else {
            problem.initial_state(self.cfg.sigma_init)
        };
        run_em_column(init, &problem, &prior, self.cfg.k_max, self.cfg.eps_cap)
    }

    fn count_nonzero(&self) -> usize {
        self.states.iter().filter(|s| !s.is_zero()).count()
    }

    fn push(&mut self, phase: u8, column: Option<usize>, active: Option<usize>) -> bool {
        self.r_hat = self.count_nonzero();
        self.buffer.pop_front();
        self.buffer.push_back(self.r_hat);
        let s = self.cfg.scale;
        let n = self.lambda0.len() as f64;
        self.path.push(PathRecord {
            iteration: self.path.len() + 1,
            phase,
            column,
            lambda0_min: self.lambda0.iter().cloned().fold(f64::INFINITY, f64::min) / s,
            lambda0_mean: self.lambda0.iter().sum::<f64>() / n / s,
            lambda0_max: self.lambda0.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / s,
            r_hat: self.r_hat,
            active_set: active,
        });
        if let Some(a) = active {
            self.active_set_history.push(a);
        }
        self.buffer.iter().all(|&r| r == self.r_hat)
    }

    /// One global step: raise every λ₀ and refit all columns.
    fn global_step(&mut self) -> Result<bool> {
        for l in &mut self.lambda0 {
            *l += self.cfg.delta_lambda;
        }
        let fits = par::map_range(self.execution, self.system.p(), |j| self.fit(j, self.lambda0[j]));
        self.states = fits.into_iter().collect::<Result<_>>()?;
        Ok(self.push(1, None, None))
    }

    fn finish(self, termination: Termination, seed: u64) -> RankRun {
        let p = self.system.p();
        let mut r = DMatrix::zeros(p, p);
        for (j, s) in self.states.iter().enumerate() {
            for i in 0..p {
                r[(i, j)] = s.beta[i];
            }
        }
        let rank_info = extract_rank(&r);
        RankRun {
            path: self.path,
            final_rank: rank_info.column_rank,
            rank_info,
            final_r: r,
            termination,
            seed,
            active_set_history: self.active_set_history,
            lambda0: self.lambda0.iter().map(|l| l / self.cfg.scale).collect(),
            theta: self.states.iter().map(|s| s.theta).collect(),
            sigma2: self.states.iter().map(|s| s.sigma2).collect(),
        }
    }
}

/// Global λ₀ ladder until the last `n_r` ranks agree.
pub fn algorithm1(system: &DecomposedSystem, config: &SslConfig) -> Result<RankRun> {
    let cfg = config.resolved(system)?;
    let design = Design::new(&system.b_tilde);
    let mut ladder = Ladder::new(system, &design, &cfg, config.execution);
    for _ in 0..cfg.max_ladder_steps {
        if ladder.global_step()? {
            return Ok(ladder.finish(Termination::BufferAgreement, config.seed));
        }
    }
    Ok(ladder.finish(Termination::LadderCap, config.seed))
}

/// Where the deterministic first phase of [`algorithm2`] left off.
#[derive(Debug, Clone)]
struct PhaseOne<'a> {
    ladder: Ladder<'a>,
    done: Option<Termination>,
}

fn phase_one<'a>(
    system: &'a DecomposedSystem,
    design: &'a Design,
    cfg: &'a ResolvedConfig,
    execution: Execution,
) -> Result<PhaseOne<'a>> {
    let mut ladder = Ladder::new(system, design, cfg, execution);
    let limit = cfg.sparsity_fraction * system.p() as f64;
    while ladder.r_hat as f64 >= limit {
        if ladder.path.len() >= cfg.max_ladder_steps {
            return Ok(PhaseOne { ladder, done: Some(Termination::LadderCap) });
        }
        ladder.global_step()?;
    }
    Ok(PhaseOne { ladder, done: None })
}

fn phase_two(start: PhaseOne<'_>, seed: u64) -> Result<RankRun> {
    let PhaseOne { mut ladder, done } = start;
    if let Some(t) = done {
        return Ok(ladder.finish(t, seed));
    }
    let cfg = ladder.cfg;
    ladder.buffer = std::iter::repeat_n(ladder.r_hat + 1, cfg.n_r).collect();
    let mut active: Vec<usize> = (0..ladder.states.len()).filter(|&j| !ladder.states[j].is_zero()).collect();
    let mut rng = uniform_stream(seed);
    loop {
        if ladder.r_hat == 0 {
            return Ok(ladder.finish(Termination::RankZero, seed));
        }
        if active.is_empty() {
            return Ok(ladder.finish(Termination::BufferAgreement, seed));
        }
        if ladder.path.len() >= cfg.max_ladder_steps {
            return Ok(ladder.finish(Termination::LadderCap, seed));
        }
        let k = rng.random_range(0..active.len());
        let j = active[k];
        ladder.lambda0[j] += cfg.delta_lambda_small * active.len() as f64;
        ladder.states[j] = ladder.fit(j, ladder.lambda0[j])?;
        if ladder.states[j].is_zero() {
            active.remove(k);
        }
        if ladder.push(2, Some(j), Some(active.len())) {
            let t = if ladder.r_hat == 0 { Termination::RankZero } else { Termination::BufferAgreement };
            return Ok(ladder.finish(t, seed));
        }
    }
}

/// Global ladder down to `sparsity_fraction · p`, then randomized per-column
/// increments drawn with `config.seed`.
pub fn algorithm2(system: &DecomposedSystem, config: &SslConfig) -> Result<RankRun> {
    let cfg = config.resolved(system)?;
    let design = Design::new(&system.b_tilde);
    let start = phase_one(system, &design, &cfg, config.execution)?;
    phase_two(start, config.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub seeds: Vec<u64>,
    pub ranks: Vec<usize>,
    pub mean: f64,
    pub median: f64,
    /// `(rank, count)` in increasing rank order.
    pub histogram: Vec<(usize, usize)>,
    #[serde(skip)]
    pub runs: Vec<RankRun>,
}

impl EnsembleResult {
    pub fn from_runs(runs: Vec<RankRun>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Invalid("ensemble needs at least one run".into()));
        }
        let ranks: Vec<usize> = runs.iter().map(|r| r.final_rank).collect();
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        let mut hist = BTreeMap::new();
        for &r in &ranks {
            *hist.entry(r).or_insert(0usize) += 1;
        }
        Ok(Self {
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean: ranks.iter().sum::<usize>() as f64 / n as f64,
            median,
            ranks,
            histogram: hist.into_iter().collect(),
            runs,
        })
    }
}

/// Seeds for `n` repetitions derived from one base seed.
pub fn ensemble_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| split_seed(base, i)).collect()
}

/// [`algorithm2`] once per seed. The deterministic first phase is computed
/// once and shared; the randomized phases run in parallel.
pub fn ensemble_rank(system: &DecomposedSystem, config: &SslConfig, seeds: &[u64]) -> Result<EnsembleResult> {
    if seeds.is_empty() {
        return Err(Error::Invalid("ensemble needs at least one seed".into()));
    }
    let cfg = config.resolved(system)?;
    let design = Design::new(&system.b_tilde);
    // columns inside one run stay sequential; the seeds carry the parallelism
    let start = phase_one(system, &design, &cfg, config.execution)?;
    let start = PhaseOne {
        ladder: Ladder { execution: Execution::Sequential, ..start.ladder },
        done: start.done,
    };
    let runs = par::map(config.execution, seeds, |&seed| {
        phase_two(start.clone(), seed).map_err(|e| Error::Seed { seed, source: Box::new(e) })
    });
    EnsembleResult::from_runs(runs.into_iter().collect::<Result<_>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_extraction() {
        let mut r = DMatrix::zeros(3, 3);
        assert_eq!(extract_rank(&r).column_rank, 0);
        r[(0, 1)] = 2.0;
        r[(2, 1)] = -1.0;
        let info = extract_rank(&r);
        assert_eq!((info.column_rank, info.svd_rank, info.disagrees), (1, 1, false));
        r[(0, 2)] = 4.0;
        r[(2, 2)] = -2.0;
        let info = extract_rank(&r);
        assert_eq!((info.column_rank, info.svd_rank, info.disagrees), (2, 1, true));
    }

    #[test]
    fn config_validation_and_resolution() {
        let c = SslConfig::default();
        c.validate().unwrap();
        assert!(SslConfig { lambda0_init: 0.5, ..c.clone() }.validate().is_err());
        assert!(SslConfig { n_r: 0, ..c.clone() }.validate().is_err());
        assert!(SslConfig { sparsity_fraction: 0.0, ..c.clone() }.validate().is_err());
        assert!(SslConfig { a: Some(vec![0.5]), ..c.clone() }.validate().is_err());
        let json = serde_json::to_string(&c).unwrap();
        let back: SslConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let partial: SslConfig = serde_json::from_str(r#"{"n_r": 3}"#).unwrap();
        assert_eq!(partial.n_r, 3);
        assert!(serde_json::from_str::<SslConfig>(r#"{"nr": 3}"#).is_err());
    }

    #[test]
    fn ensemble_statistics() {
        let run = |rank: usize, seed: u64| RankRun {
            path: vec![],
            final_r: DMatrix::zeros(1, 1),
            final_rank: rank,
            rank_info: RankInfo { column_rank: rank, svd_rank: rank, disagrees: false },
            termination: Termination::BufferAgreement,
            seed,
            active_set_history: vec![],
            lambda0: vec![],
            theta: vec![],
            sigma2: vec![],
        };
        let e = EnsembleResult::from_runs(vec![run(5, 1), run(4, 2), run(5, 3), run(6, 4)]).unwrap();
        assert_eq!(e.mean, 5.0);
        assert_eq!(e.median, 5.0);
        assert_eq!(e.histogram, vec![(4, 1), (5, 2), (6, 1)]);
        let e = EnsembleResult::from_runs(vec![run(3, 9)]).unwrap();
        assert_eq!(e.histogram, vec![(3, 1)]);
        assert!(EnsembleResult::from_runs(vec![]).is_err());
    }
}
