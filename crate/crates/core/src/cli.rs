//! The `sslvecm` command line: `simulate`, `estimate`, `portfolio`, `adf`
//! and `replay`.
//!
//! Every artifact-producing command writes `manifest.json` next to its
//! outputs. The manifest records the command, the fully resolved config,
//! input digests, seeds and termination counts; `replay` re-runs it into a
//! new directory with bit-identical results. Wall-clock timings are the one
//! non-reproducible output and go to `timings.csv`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_prep::{decompose, SeriesPanel, DEFAULT_RIDGE_TAU};
use crate::error::Error;
use crate::io::{fmt_f64, read_json, read_matrix, read_panel, sha256_file, write_json, write_matrix, write_panel, write_table};
use crate::par::{set_threads, Execution};
use crate::portfolio::{normalize_prices, normalize_series, portfolios_from_run, PortfolioSet, ReturnConvention, DEFAULT_TOP_K};
use crate::rank_search::{algorithm1, ensemble_rank, ensemble_seeds, PathRecord, RankRun, SslConfig};
use crate::simulation::{run_sim_study, simulate_var, Algorithm, DgpSpec, StudySpec};
use crate::stationarity::{screen_i1, AdfLags};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a library error with the stage that produced it.
fn stage(name: &'static str) -> impl Fn(Error) -> CliError {
    move |e| CliError::Runtime(format!("{name}: {e}"))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "sslvecm", version, about = "Cointegration rank estimation with spike-and-slab lasso EM")]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Monte Carlo rank-recovery study on the Jordan-block DGP.
    Simulate(SimulateArgs),
    /// Estimate the cointegration rank of a panel.
    Estimate(EstimateArgs),
    /// Build cointegration portfolios and compare their volatility with benchmarks.
    Portfolio(PortfolioArgs),
    /// ADF unit-root tests and I(1) screening.
    Adf(AdfArgs),
    /// Re-run a manifest into a new directory.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum AlgArg {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
}

impl From<AlgArg> for Algorithm {
    fn from(a: AlgArg) -> Self {
        match a {
            AlgArg::One => Algorithm::One,
            AlgArg::Two => Algorithm::Two,
        }
    }
}

/// Config file plus per-field overrides.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct ConfigArgs {
    /// JSON file with rank-search settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda0_init: Option<f64>,
    #[arg(long)]
    delta_lambda: Option<f64>,
    #[arg(long)]
    delta_lambda_small: Option<f64>,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    eps_cap: Option<f64>,
    #[arg(long)]
    sparsity_fraction: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<SslConfig> {
        let mut c: SslConfig = match &self.config {
            Some(p) => read_json(p).map_err(|e| usage(format!("config: {e}")))?,
            None => SslConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(lambda1, lambda0_init, delta_lambda, n_r, k_max, eps_cap, sparsity_fraction);
        if let Some(v) = self.delta_lambda_small {
            c.delta_lambda_small = Some(v);
        }
        c.validate().map_err(|e| usage(format!("config: {e}")))?;
        Ok(c)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    r: usize,
    /// Time points per sample.
    #[arg(long = "T", alias = "t")]
    t: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, value_enum)]
    algorithm: AlgArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Randomized runs per sample (algorithm 2).
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.95)]
    i1_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    max_consecutive_rejections: usize,
    #[arg(long, default_value_t = DEFAULT_RIDGE_TAU)]
    ridge_tau: f64,
    /// Also write each accepted sample as `sample_<i>.csv`.
    #[arg(long)]
    write_panels: bool,
    #[command(flatten)]
    #[serde(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EstimateArgs {
    /// Panel CSV: header of names, one row per time point, optional `date` column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "1")]
    algorithm: AlgArg,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RIDGE_TAU)]
    ridge_tau: f64,
    /// Keep only series that pass the ADF I(1) screen.
    #[arg(long)]
    screen: bool,
    #[command(flatten)]
    #[serde(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ConventionArg {
    Arithmetic,
    Ratio,
}

impl From<ConventionArg> for ReturnConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Arithmetic => ReturnConvention::Arithmetic,
            ConventionArg::Ratio => ReturnConvention::Ratio,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PortfolioArgs {
    #[arg(long)]
    prices: PathBuf,
    /// Π̂ matrix CSV (headerless). Without it Π̂ is estimated on the training window.
    #[arg(long)]
    pi: Option<PathBuf>,
    /// Training time points (default: 80% of the panel).
    #[arg(long, conflicts_with = "split_date")]
    split: Option<usize>,
    /// First date of the test window.
    #[arg(long)]
    split_date: Option<String>,
    /// Benchmark index CSV with one value column.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, value_enum, default_value = "arithmetic")]
    returns: ConventionArg,
    #[arg(long, value_enum, default_value = "ratio")]
    benchmark_returns: ConventionArg,
    #[arg(long, value_enum, default_value = "1")]
    algorithm: AlgArg,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RIDGE_TAU)]
    ridge_tau: f64,
    #[command(flatten)]
    #[serde(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct AdfArgs {
    #[arg(long)]
    input: PathBuf,
    /// `auto` or a fixed lag order.
    #[arg(long, default_value = "auto", value_parser = parse_lags)]
    lags: AdfLags,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

fn parse_lags(s: &str) -> std::result::Result<AdfLags, String> {
    if s == "auto" {
        return Ok(AdfLags::Auto);
    }
    s.parse().map(AdfLags::Fixed).map_err(|_| format!("expected `auto` or a lag count, got {s:?}"))
}

#[derive(Args, Debug, Clone)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    command: Command,
    pub config: Option<SslConfig>,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    /// Runs per termination reason.
    pub terminations: BTreeMap<String, usize>,
    pub outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), timings: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn finish(mut self, command: Command, config: Option<SslConfig>, inputs: Vec<InputDigest>, seeds: Vec<u64>, terminations: BTreeMap<String, usize>) -> CliResult<()> {
        let timings = std::mem::take(&mut self.timings);
        let tp = self.dir.join("timings.csv");
        write_table(&tp, &["stage", "seconds"], timings.into_iter().map(|(s, t)| vec![s, format!("{t:.6}")]))
            .map_err(stage("write timings"))?;
        let mut outputs = self.files.clone();
        outputs.sort();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config,
            inputs,
            seeds,
            terminations,
            outputs,
        };
        write_json(&self.dir.join("manifest.json"), &manifest).map_err(stage("write manifest"))
    }
}

fn digest(path: &Path) -> CliResult<InputDigest> {
    Ok(InputDigest { path: path.to_path_buf(), sha256: sha256_file(path).map_err(stage("digest input"))? })
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn path_rows<'a>(prefix: Vec<String>, path: &'a [PathRecord]) -> impl Iterator<Item = Vec<String>> + 'a {
    path.iter().map(move |r| {
        let mut row = prefix.clone();
        row.extend([
            r.iteration.to_string(),
            r.phase.to_string(),
            opt(r.column),
            fmt_f64(r.lambda0_min),
            fmt_f64(r.lambda0_mean),
            fmt_f64(r.lambda0_max),
            r.r_hat.to_string(),
            opt(r.active_set),
        ]);
        row
    })
}

const PATH_HEADER: [&str; 8] = ["iteration", "phase", "column", "lambda0_min", "lambda0_mean", "lambda0_max", "r_hat", "active_set"];

fn cmd_simulate(a: &SimulateArgs, config: Option<SslConfig>) -> CliResult<()> {
    let config = match config {
        Some(c) => c,
        None => a.cfg.resolve()?,
    };
    let spec = StudySpec {
        p: a.p,
        r: a.r,
        sigma: a.sigma,
        t: a.t,
        samples: a.samples,
        algorithm: a.algorithm.into(),
        repetitions: a.repetitions,
        base_seed: a.seed,
        i1_fraction: a.i1_fraction,
        max_consecutive_rejections: a.max_consecutive_rejections,
        ridge_tau: a.ridge_tau,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut out = Outputs::new(&a.out)?;
    let result = out.time("study", || run_sim_study(&spec, &config)).map_err(stage("simulation"))?;

    write_json(&out.path("result.json"), &result).map_err(stage("write result"))?;
    let rows = result.samples.iter().map(|s| {
        vec![
            s.index.to_string(),
            s.seed.to_string(),
            s.rejected_seeds.len().to_string(),
            fmt_f64(s.r_hat),
            s.run_ranks.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
            s.iterations.to_string(),
            label(&s.termination),
        ]
    });
    let header = ["index", "seed", "rejected_draws", "r_hat", "run_ranks", "iterations", "termination"];
    write_table(&out.path("samples.csv"), &header, rows).map_err(stage("write samples"))?;
    let mut header = vec!["sample"];
    header.extend(PATH_HEADER);
    let rows = result.samples.iter().flat_map(|s| path_rows(vec![s.index.to_string()], &s.path));
    write_table(&out.path("paths.csv"), &header, rows).map_err(stage("write paths"))?;
    if a.write_panels {
        for s in &result.samples {
            let panel = simulate_var(&DgpSpec { p: a.p, r: a.r, sigma: a.sigma, t: a.t, seed: s.seed })
                .map_err(stage("simulation"))?;
            write_panel(&out.path(&format!("sample_{}.csv", s.index)), &panel).map_err(stage("write panel"))?;
        }
    }
    for s in &result.samples {
        out.timings.push((format!("sample_{}", s.index), s.runtime_secs));
    }

    let mut terms = BTreeMap::new();
    for s in &result.samples {
        *terms.entry(label(&s.termination)).or_insert(0) += 1;
    }
    let seeds = result.samples.iter().map(|s| s.seed).collect();
    println!(
        "r̂ mean {:.3}; exact {:.1}%, ±p/100 {:.1}%, ±p/50 {:.1}%",
        result.estimates.iter().sum::<f64>() / result.estimates.len() as f64,
        result.pct_exact,
        result.pct_within_p100,
        result.pct_within_p50
    );
    out.finish(Command::Simulate(a.clone()), Some(config), vec![], seeds, terms)
}

/// Rank search by either algorithm. Returns the representative run (the
/// first seed's for the ensemble) and the ensemble summary when present.
fn search(
    panel: &SeriesPanel,
    ridge_tau: f64,
    config: &SslConfig,
    algorithm: AlgArg,
    repetitions: usize,
    seed: u64,
    out: &mut Outputs,
) -> CliResult<(crate::data_prep::DecomposedSystem, RankRun, Option<crate::rank_search::EnsembleResult>, Vec<u64>)> {
    let system = out.time("decompose", || decompose(panel, ridge_tau)).map_err(stage("decompose"))?;
    let mut cfg = config.clone();
    cfg.seed = seed;
    match algorithm {
        AlgArg::One => {
            let run = out.time("rank_search", || algorithm1(&system, &cfg)).map_err(stage("rank search"))?;
            Ok((system, run, None, vec![seed]))
        }
        AlgArg::Two => {
            if repetitions == 0 {
                return Err(usage("--repetitions must be at least 1"));
            }
            let seeds = ensemble_seeds(seed, repetitions);
            let mut ens = out
                .time("rank_search", || ensemble_rank(&system, &cfg, &seeds))
                .map_err(stage("rank search"))?;
            let run = ens.runs.swap_remove(0);
            ens.runs.clear();
            Ok((system, run, Some(ens), seeds))
        }
    }
}

#[derive(Serialize)]
struct RankSummary<'a> {
    algorithm: AlgArg,
    variables: Vec<String>,
    rank: f64,
    representative_rank: usize,
    rank_info: crate::rank_search::RankInfo,
    termination: crate::rank_search::Termination,
    iterations: usize,
    ensemble: Option<&'a crate::rank_search::EnsembleResult>,
}

fn termination_counts(run: &RankRun, ens: Option<&crate::rank_search::EnsembleResult>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    *m.entry(label(&run.termination)).or_insert(0) += 1;
    if let Some(e) = ens {
        m.insert("ensemble_runs".into(), e.ranks.len());
    }
    m
}

fn cmd_estimate(a: &EstimateArgs, config: Option<SslConfig>) -> CliResult<()> {
    let config = match config {
        Some(c) => c,
        None => a.cfg.resolve()?,
    };
    let mut out = Outputs::new(&a.out)?;
    let input = digest(&a.input)?;
    let mut panel = read_panel(&a.input).map_err(stage("read panel"))?;
    if a.screen {
        let report = out.time("screen", || screen_i1(&panel, AdfLags::Auto, config.execution));
        write_json(&out.path("screen.json"), &report).map_err(stage("write screen"))?;
        panel = panel.select_vars(&report.retained).map_err(stage("I(1) screen"))?;
    }
    let (system, run, ens, seeds) = search(&panel, a.ridge_tau, &config, a.algorithm, a.repetitions, a.seed, &mut out)?;
    let variables: Vec<String> = (0..panel.n_vars()).map(|j| panel.label(j)).collect();
    let summary = RankSummary {
        algorithm: a.algorithm,
        variables,
        rank: ens.as_ref().map_or(run.final_rank as f64, |e| e.mean),
        representative_rank: run.final_rank,
        rank_info: run.rank_info,
        termination: run.termination,
        iterations: run.path.len(),
        ensemble: ens.as_ref(),
    };
    write_json(&out.path("rank.json"), &summary).map_err(stage("write rank"))?;
    write_matrix(&out.path("r_hat.csv"), &run.final_r).map_err(stage("write R"))?;
    let pi = crate::portfolio::pi_from_estimate(&run.final_r, &system).map_err(stage("reconstruct"))?;
    write_matrix(&out.path("pi_hat.csv"), &pi).map_err(stage("write Π"))?;
    write_table(&out.path("path.csv"), &PATH_HEADER, path_rows(vec![], &run.path)).map_err(stage("write path"))?;
    println!("rank {}", summary.rank);
    let terms = termination_counts(&run, ens.as_ref());
    out.finish(Command::Estimate(a.clone()), Some(config), vec![input], seeds, terms)
}

fn cmd_portfolio(a: &PortfolioArgs, config: Option<SslConfig>) -> CliResult<()> {
    let mut out = Outputs::new(&a.out)?;
    let mut inputs = vec![digest(&a.prices)?];
    let prices = read_panel(&a.prices).map_err(stage("read prices"))?;
    let panel = normalize_prices(&prices).map_err(stage("normalize"))?;
    let n = panel.n_points();
    let split = match (&a.split, &a.split_date) {
        (Some(s), _) => *s,
        (None, Some(d)) => {
            let dates = panel.dates.as_ref().ok_or_else(|| usage("--split-date needs a date column"))?;
            dates.iter().position(|x| x == d).ok_or_else(|| usage(format!("date {d:?} not in prices")))?
        }
        (None, None) => n * 4 / 5,
    };
    if split < 3 || split + 2 > n {
        return Err(usage(format!("split {split} leaves too few points in a {n}-point panel")));
    }
    let labels: Vec<String> = (0..panel.n_vars()).map(|j| panel.label(j)).collect();
    let p = labels.len();
    let (set, config, seeds, terms) = match &a.pi {
        Some(pi_path) => {
            inputs.push(digest(pi_path)?);
            let pi = read_matrix(pi_path).map_err(stage("read Π"))?;
            if pi.shape() != (p, p) {
                return Err(usage(format!(
                    "Π̂ is {}x{} but the panel has {p} assets (expected {p}x{p})",
                    pi.nrows(),
                    pi.ncols()
                )));
            }
            let set = PortfolioSet::new(pi, labels, split).map_err(stage("portfolios"))?;
            (set, None, vec![], BTreeMap::new())
        }
        None => {
            let config = match config {
                Some(c) => c,
                None => a.cfg.resolve()?,
            };
            let train = panel.slice_points(0, split).map_err(stage("split"))?;
            let (system, run, ens, seeds) = search(&train, a.ridge_tau, &config, a.algorithm, a.repetitions, a.seed, &mut out)?;
            write_matrix(&out.path("r_hat.csv"), &run.final_r).map_err(stage("write R"))?;
            let set = portfolios_from_run(&run, &system, labels, split).map_err(stage("portfolios"))?;
            write_matrix(&out.path("pi_hat.csv"), &set.pi_hat).map_err(stage("write Π"))?;
            let terms = termination_counts(&run, ens.as_ref());
            (set, Some(config), seeds, terms)
        }
    };
    let index = match &a.index {
        Some(path) => {
            inputs.push(digest(path)?);
            let ix = read_panel(path).map_err(stage("read index"))?;
            if ix.n_vars() != 1 {
                return Err(usage(format!("index file has {} value columns, expected 1", ix.n_vars())));
            }
            Some(normalize_series(&ix.series(0)).map_err(stage("normalize index"))?)
        }
        None => None,
    };
    let exec = config.as_ref().map_or(Execution::default(), |c| c.execution);
    let report = set
        .evaluate(&panel, index.as_deref(), a.returns.into(), a.benchmark_returns.into(), exec)
        .map_err(|e| match e {
            Error::Dimension(m) => usage(m),
            e => stage("evaluate")(e),
        })?;

    let mut header = vec!["portfolio".to_string()];
    header.extend(set.labels.iter().cloned());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = set.weights.iter().enumerate().map(|(k, w)| {
        let mut r = vec![set.name(k)];
        r.extend(w.iter().map(|&x| fmt_f64(x)));
        r
    });
    write_table(&out.path("weights.csv"), &header_ref, rows).map_err(stage("write weights"))?;
    write_json(&out.path("volatility.json"), &report).map_err(stage("write report"))?;

    let values = set.values(&panel, exec).map_err(stage("values"))?;
    let ew = crate::portfolio::equal_weight_values(&panel);
    let mut header = vec!["t".to_string()];
    if panel.dates.is_some() {
        header.push("date".into());
    }
    header.extend((0..set.weights.len()).map(|k| set.name(k)));
    header.push("equal_weight".into());
    if index.is_some() {
        header.push("index".into());
    }
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..n).map(|t| {
        let mut r = vec![t.to_string()];
        if let Some(d) = &panel.dates {
            r.push(d[t].clone());
        }
        r.extend(values.iter().map(|v| fmt_f64(v[t])));
        r.push(fmt_f64(ew[t]));
        if let Some(ix) = &index {
            r.push(fmt_f64(ix[t]));
        }
        r
    });
    write_table(&out.path("values.csv"), &header_ref, rows).map_err(stage("write values"))?;
    let set_ref = &set;
    let rows = (0..set.weights.len()).flat_map(|k| {
        set_ref
            .top_weights(k, a.top_k)
            .into_iter()
            .enumerate()
            .map(move |(i, (l, w))| vec![set_ref.name(k), (i + 1).to_string(), l, fmt_f64(w)])
    });
    write_table(&out.path("top_weights.csv"), &["portfolio", "rank", "asset", "weight"], rows)
        .map_err(stage("write top weights"))?;

    println!(
        "{} portfolios; equal weight train {:.4}% test {:.4}%",
        set.weights.len(),
        report.equal_weight.train_vol_pct,
        report.equal_weight.test_vol_pct
    );
    if let Some(b) = report.best() {
        println!("lowest train volatility: {} train {:.4}% test {:.4}%", b.name, b.train_vol_pct, b.test_vol_pct);
    }
    out.finish(Command::Portfolio(a.clone()), config, inputs, seeds, terms)
}

fn cmd_adf(a: &AdfArgs) -> CliResult<()> {
    let mut out = Outputs::new(&a.out)?;
    let input = digest(&a.input)?;
    let panel = read_panel(&a.input).map_err(stage("read panel"))?;
    let report = out.time("adf", || screen_i1(&panel, a.lags, Execution::default()));
    write_json(&out.path("adf.json"), &report).map_err(stage("write report"))?;
    let rows = report.series.iter().map(|s| {
        let lv = s.levels.as_ref();
        let df = s.differences.as_ref();
        vec![
            s.label.clone(),
            opt(lv.map(|r| fmt_f64(r.statistic))),
            opt(lv.map(|r| r.lags_used)),
            opt(lv.map(|r| r.reject_unit_root)),
            opt(df.map(|r| fmt_f64(r.statistic))),
            opt(df.map(|r| r.reject_unit_root)),
            s.i1.to_string(),
            s.error.clone().unwrap_or_default(),
        ]
    });
    let header = ["series", "level_stat", "level_lags", "level_reject", "diff_stat", "diff_reject", "i1", "error"];
    write_table(&out.path("adf.csv"), &header, rows).map_err(stage("write table"))?;
    for s in &report.series {
        let decision = match &s.levels {
            Some(l) if l.reject_unit_root => "reject unit root",
            Some(_) => "fail to reject unit root",
            None => "no decision",
        };
        println!("{}: {decision}; I(1) {}", s.label, s.i1);
    }
    out.finish(Command::Adf(a.clone()), None, vec![input], vec![], BTreeMap::new())
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let m: RunManifest = read_json(&a.manifest).map_err(|e| usage(format!("manifest: {e}")))?;
    for input in &m.inputs {
        let now = sha256_file(&input.path).map_err(stage("digest input"))?;
        if now != input.sha256 {
            return Err(CliError::Runtime(format!("input {} changed since the manifest was written", input.path.display())));
        }
    }
    let out = a.out.clone();
    match m.command {
        Command::Simulate(mut s) => {
            s.out = out;
            cmd_simulate(&s, m.config)
        }
        Command::Estimate(mut s) => {
            s.out = out;
            cmd_estimate(&s, m.config)
        }
        Command::Portfolio(mut s) => {
            s.out = out;
            cmd_portfolio(&s, m.config)
        }
        Command::Adf(mut s) => {
            s.out = out;
            cmd_adf(&s)
        }
        Command::Replay(_) => Err(usage("a manifest cannot hold a replay")),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        set_threads(n);
    }
    let res = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, None),
        Command::Estimate(a) => cmd_estimate(a, None),
        Command::Portfolio(a) => cmd_portfolio(a, None),
        Command::Adf(a) => cmd_adf(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}
