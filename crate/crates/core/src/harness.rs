//! Experiment runner: configuration, seeded benchmark sweeps, and CSV
//! report emission.
//!
//! Seeds are split as follows. Repetition `r` of a sweep runs on the
//! instance seeded `derive_seed(seed, [r])`, shared by every cell so that
//! cells are compared on identical instances, and the adaptive search draws
//! its own choices from `derive_seed(seed, [r, 1])`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::adaptive::{run_adaptive_barinel, AdaptiveConfig, AdaptiveError, IterationTrace};
use crate::model::{recall_precision, ConditionCatalog, ConditionId, Metrics, ModelError, NecessarySet};
use crate::oracle::wire::ExternalSession;
use crate::oracle::{derive_seed, Oracle, OracleError, ProblemInstance, SimulatedOracle, RNG_ALGORITHM};
use crate::splitting::{find_necessary, repeated_binary_splitting, SplitError, SplitSearchConfig};

pub const ALGO_GBS: &str = "gbs";
pub const ALGO_BINARY_SPLITTING: &str = "binary-splitting";
pub const ALGO_ADAPTIVE: &str = "adaptive-barinel";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("config violation: {0}")]
    Config(String),
    #[error("no rows to report")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Noiseless,
    Noisy,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Noiseless => "noiseless",
            Mode::Noisy => "noisy",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noiseless" => Ok(Mode::Noiseless),
            "noisy" => Ok(Mode::Noisy),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// Where test outcomes come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleTarget {
    Sim,
    /// `host:port` of an external oracle speaking the wire protocol.
    External(String),
}

impl fmt::Display for OracleTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleTarget::Sim => f.write_str("sim"),
            OracleTarget::External(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

impl FromStr for OracleTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sim" {
            return Ok(OracleTarget::Sim);
        }
        match s.strip_prefix("tcp://") {
            Some(addr) if !addr.is_empty() => Ok(OracleTarget::External(addr.to_string())),
            _ => Err(format!("oracle must be `sim` or `tcp://host:port`, got `{s}`")),
        }
    }
}

/// One experiment, read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub oracle: OracleTarget,
    /// Catalog size for simulated runs; taken from `catalog` when absent.
    pub n: Option<usize>,
    pub d_true: Option<usize>,
    /// Empty in noisy mode means `d_hat = d_true`.
    pub d_hat: Vec<usize>,
    /// `(mu, sigma)` cells of the noisy sweep.
    pub noise: Vec<(f64, f64)>,
    pub reps: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Labels for simulated instances.
    pub catalog: Option<PathBuf>,
    /// Per-test timeout against an external oracle.
    pub timeout: Option<Duration>,
    /// Template for noisy runs; `d_hat` and `rng_seed` are set per run.
    pub adaptive: AdaptiveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Noiseless,
            oracle: OracleTarget::Sim,
            n: None,
            d_true: None,
            d_hat: Vec::new(),
            noise: Vec::new(),
            reps: 1,
            seed: 0,
            output: PathBuf::from("results"),
            catalog: None,
            timeout: None,
            adaptive: AdaptiveConfig::default(),
        }
    }
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_noise(value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|cell| {
            let (mu, sigma) = cell.split_once(':').ok_or_else(|| format!("noise cell `{cell}` is not mu:sigma"))?;
            let mu = mu.trim().parse::<f64>().map_err(|e| format!("`{mu}`: {e}"))?;
            let sigma = sigma.trim().parse::<f64>().map_err(|e| format!("`{sigma}`: {e}"))?;
            Ok((mu, sigma))
        })
        .collect()
}

fn one<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parse and validate. `#` starts a comment; every key may appear once.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HarnessError::ConfigLine { line: line_no, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(err(format!("`{key}` already set on line {prev}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let a = &mut self.adaptive;
        match key {
            "mode" => self.mode = value.parse()?,
            "oracle" => self.oracle = value.parse()?,
            "n" => self.n = Some(one(value)?),
            "d_true" => self.d_true = Some(one(value)?),
            "d_hat" => self.d_hat = parse_list(value)?,
            "noise" => self.noise = parse_noise(value)?,
            "reps" => self.reps = one(value)?,
            "seed" => self.seed = one(value)?,
            "output" => self.output = PathBuf::from(value),
            "catalog" => self.catalog = Some(PathBuf::from(value)),
            "timeout_ms" => self.timeout = Some(Duration::from_millis(one(value)?)),
            "epsilon0" => a.epsilon0 = one(value)?,
            "decay" => a.decay = one(value)?,
            "epsilon_min" => a.epsilon_min = one(value)?,
            "bootstrap" => a.bootstrap_len = one(value)?,
            "decode_freq" => a.decode_freq = one(value)?,
            "max_iters" => a.max_iters = one(value)?,
            "convergence_window" => a.convergence_window = one(value)?,
            "confirm_count" => a.confirm_count = one(value)?,
            "prior" => a.barinel.prior = one(value)?,
            "candidate_cap" => {
                a.barinel.candidate_cap = if value == "none" { None } else { Some(one(value)?) };
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        let sim = self.oracle == OracleTarget::Sim;
        if sim && self.d_true.is_none() {
            return fail("simulated runs require d_true".into());
        }
        if !sim && !self.noise.is_empty() {
            return fail("an external oracle carries its own noise; remove the noise sweep".into());
        }
        if sim && self.n.is_none() && self.catalog.is_none() {
            return fail("simulated runs require n or a catalog".into());
        }
        if let (Some(n), Some(d)) = (self.n, self.d_true) {
            if d > n {
                return fail(format!("d_true = {d} exceeds n = {n}"));
            }
        }
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        if self.d_hat.contains(&0) {
            return fail("every d_hat must be at least 1".into());
        }
        match self.mode {
            Mode::Noiseless => {
                if self.d_hat.is_empty() {
                    return fail("noiseless mode requires a d_hat sweep".into());
                }
                if !self.noise.is_empty() {
                    return fail("noiseless mode takes no noise sweep".into());
                }
            }
            Mode::Noisy => {
                if self.d_hat.is_empty() && self.d_true.is_none_or(|d| d == 0) {
                    return fail("noisy mode requires d_hat or a positive d_true".into());
                }
                if sim && self.noise.is_empty() {
                    return fail("simulated noisy mode requires a noise sweep".into());
                }
                if let Some(&(mu, sigma)) = self.noise.iter().find(|(m, s)| !m.is_finite() || !(*s >= 0.0 && s.is_finite())) {
                    return fail(format!("invalid noise cell {mu}:{sigma}"));
                }
                self.adaptive.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                self.adaptive.barinel.mle.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if !(self.adaptive.barinel.prior > 0.0 && self.adaptive.barinel.prior < 1.0) {
                    return fail("prior must lie in (0, 1)".into());
                }
            }
        }
        Ok(())
    }

    /// The d_hat values actually swept.
    pub fn d_hat_sweep(&self) -> Vec<usize> {
        if self.d_hat.is_empty() {
            self.d_true.into_iter().collect()
        } else {
            self.d_hat.clone()
        }
    }

    /// Canonical `key = value` text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let a = &self.adaptive;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("mode", self.mode.to_string());
        put("oracle", self.oracle.to_string());
        if let Some(n) = self.n {
            put("n", n.to_string());
        }
        if let Some(d) = self.d_true {
            put("d_true", d.to_string());
        }
        if !self.d_hat.is_empty() {
            put("d_hat", join(&self.d_hat));
        }
        if !self.noise.is_empty() {
            let cells: Vec<String> = self.noise.iter().map(|(m, s)| format!("{m}:{s}")).collect();
            put("noise", join(&cells));
        }
        put("reps", self.reps.to_string());
        put("seed", self.seed.to_string());
        put("output", self.output.display().to_string());
        if let Some(c) = &self.catalog {
            put("catalog", c.display().to_string());
        }
        if let Some(t) = self.timeout {
            put("timeout_ms", t.as_millis().to_string());
        }
        if self.mode == Mode::Noisy {
            put("epsilon0", a.epsilon0.to_string());
            put("decay", a.decay.to_string());
            put("epsilon_min", a.epsilon_min.to_string());
            put("bootstrap", a.bootstrap_len.to_string());
            put("decode_freq", a.decode_freq.to_string());
            put("max_iters", a.max_iters.to_string());
            put("convergence_window", a.convergence_window.to_string());
            put("confirm_count", a.confirm_count.to_string());
            put("prior", a.barinel.prior.to_string());
            put("candidate_cap", a.barinel.candidate_cap.map_or("none".into(), |c| c.to_string()));
        }
        out
    }

    fn load_catalog(&self) -> Result<Option<ConditionCatalog>, HarnessError> {
        let Some(path) = &self.catalog else { return Ok(None) };
        let catalog = ConditionCatalog::read_file(path)?;
        if let Some(n) = self.n {
            if n != catalog.len() {
                return Err(HarnessError::Config(format!("n = {n} but the catalog lists {} conditions", catalog.len())));
            }
        }
        Ok(Some(catalog))
    }

    fn sim_instance(
        &self,
        catalog: Option<&ConditionCatalog>,
        noise: Option<(f64, f64)>,
        rep: usize,
    ) -> Result<(ProblemInstance, u64), HarnessError> {
        let n = catalog.map_or_else(|| self.n.unwrap_or(0), ConditionCatalog::len);
        let d = self.d_true.unwrap_or(0);
        if d > n {
            return Err(HarnessError::Config(format!("d_true = {d} exceeds n = {n}")));
        }
        let seed = instance_seed(self.seed, rep);
        let mut instance = ProblemInstance::random(n, d, noise, seed)?;
        if let Some(c) = catalog {
            instance.catalog = c.clone();
        }
        Ok((instance, seed))
    }

    fn connect(&self, addr: &str) -> Result<ExternalOracle, HarnessError> {
        let mut session = ExternalSession::connect_tcp(addr, self.timeout)?;
        session.fetch_catalog()?;
        Ok(session)
    }
}

type ExternalOracle = ExternalSession<std::io::BufReader<std::net::TcpStream>, std::net::TcpStream>;

pub fn instance_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &[rep as u64])
}

pub fn search_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &[rep as u64, 1])
}

/// One (algorithm, cell, repetition) result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub algorithm: &'static str,
    pub oracle: String,
    pub n: usize,
    pub d_true: Option<usize>,
    pub d_hat: usize,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub rep: usize,
    /// Instance seed; zero against an external oracle.
    pub seed: u64,
    pub tests_used: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    /// Only known when the truth is; implies recall = precision = 1.
    pub exact_recovery: Option<bool>,
    /// Tests used when recall first reached 1 (adaptive runs).
    pub first_full_recall: Option<usize>,
    pub converged: Option<bool>,
    pub wall_time: Duration,
}

/// Per-iteration trace of one adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub d_hat: usize,
    pub rep: usize,
    pub trace: Vec<IterationTrace>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOutput {
    pub rows: Vec<ExperimentRow>,
    pub traces: Vec<RunTrace>,
}

fn metrics(estimate: &[ConditionId], truth: Option<&NecessarySet>) -> Option<Metrics> {
    truth.map(|t| recall_precision(estimate, t).expect("estimates stay within the catalog"))
}

fn exact(m: Option<Metrics>) -> Option<bool> {
    m.map(|m| m.recall == 1.0 && m.precision == 1.0)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BenchmarkOutput, HarnessError> {
    match cfg.mode {
        Mode::Noiseless => Ok(BenchmarkOutput { rows: run_noiseless_benchmark(cfg)?, traces: Vec::new() }),
        Mode::Noisy => run_noisy_benchmark(cfg),
    }
}

/// For each d_hat and repetition, GBS with residual recovery and binary
/// splitting repeated d times, both on the same instance.
pub fn run_noiseless_benchmark(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>, HarnessError> {
    cfg.validate()?;
    if cfg.mode != Mode::Noiseless {
        return Err(HarnessError::Config("run_noiseless_benchmark needs mode = noiseless".into()));
    }
    let jobs: Vec<(usize, usize)> =
        cfg.d_hat_sweep().into_iter().flat_map(|d_hat| (0..cfg.reps).map(move |rep| (d_hat, rep))).collect();
    let batches: Vec<Vec<ExperimentRow>> = match &cfg.oracle {
        OracleTarget::Sim => {
            let catalog = cfg.load_catalog()?;
            jobs.par_iter()
                .map(|&(d_hat, rep)| {
                    let (instance, seed) = cfg.sim_instance(catalog.as_ref(), None, rep)?;
                    let truth = instance.truth.clone();
                    let d = truth.cardinality();
                    let sim = || Ok(SimulatedOracle::new(instance.clone()));
                    noiseless_pair(cfg, d_hat, rep, seed, Some(&truth), Some(d), sim)
                })
                .collect::<Result<_, _>>()?
        }
        OracleTarget::External(addr) => jobs
            .iter()
            .map(|&(d_hat, rep)| noiseless_pair(cfg, d_hat, rep, 0, None, cfg.d_true, || cfg.connect(addr)))
            .collect::<Result<_, _>>()?,
    };
    Ok(batches.into_iter().flatten().collect())
}

/// `make_oracle` is called once per algorithm so each starts from a fresh
/// outcome stream.
fn noiseless_pair<O: Oracle>(
    cfg: &ExperimentConfig,
    d_hat: usize,
    rep: usize,
    seed: u64,
    truth: Option<&NecessarySet>,
    baseline_d: Option<usize>,
    make_oracle: impl Fn() -> Result<O, HarnessError>,
) -> Result<Vec<ExperimentRow>, HarnessError> {
    let mut oracle = make_oracle()?;
    let n = oracle.size();
    let items: Vec<ConditionId> = (0..n).collect();
    let row = |algorithm, tests_used, found: Vec<ConditionId>, wall_time| {
        let m = metrics(&found, truth);
        ExperimentRow {
            algorithm,
            oracle: cfg.oracle.to_string(),
            n,
            d_true: cfg.d_true,
            d_hat,
            mu: None,
            sigma: None,
            rep,
            seed,
            tests_used,
            recall: m.map(|m| m.recall),
            precision: m.map(|m| m.precision),
            exact_recovery: exact(m),
            first_full_recall: None,
            converged: None,
            wall_time,
        }
    };

    let start = Instant::now();
    let found = find_necessary(&items, &SplitSearchConfig::new(d_hat), &mut oracle)?;
    let mut rows = vec![row(ALGO_GBS, found.tests_used, found.defective_ids(), start.elapsed())];

    if let Some(d) = baseline_d {
        let mut oracle = make_oracle()?;
        let start = Instant::now();
        let found = repeated_binary_splitting(&items, d, &mut oracle)?;
        rows.push(row(ALGO_BINARY_SPLITTING, found.tests_used, found.defective_ids(), start.elapsed()));
    }
    Ok(rows)
}

type NoiseCell = Option<(f64, f64)>;

/// Adaptive Barinel over every (noise cell, d_hat, repetition).
pub fn run_noisy_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkOutput, HarnessError> {
    cfg.validate()?;
    if cfg.mode != Mode::Noisy {
        return Err(HarnessError::Config("run_noisy_benchmark needs mode = noisy".into()));
    }
    let cells: Vec<NoiseCell> =
        if cfg.noise.is_empty() { vec![None] } else { cfg.noise.iter().copied().map(Some).collect() };
    let jobs: Vec<(NoiseCell, usize, usize)> = cells
        .iter()
        .flat_map(|&cell| cfg.d_hat_sweep().into_iter().flat_map(move |d| (0..cfg.reps).map(move |r| (cell, d, r))))
        .collect();

    let results: Vec<(ExperimentRow, RunTrace)> = match &cfg.oracle {
        OracleTarget::Sim => {
            let catalog = cfg.load_catalog()?;
            jobs.par_iter()
                .map(|&(cell, d_hat, rep)| {
                    let (instance, seed) = cfg.sim_instance(catalog.as_ref(), cell, rep)?;
                    let truth = instance.truth.clone();
                    noisy_run(cfg, cell, d_hat, rep, seed, Some(&truth), SimulatedOracle::new(instance))
                })
                .collect::<Result<_, _>>()?
        }
        OracleTarget::External(addr) => jobs
            .iter()
            .map(|&(cell, d_hat, rep)| noisy_run(cfg, cell, d_hat, rep, 0, None, cfg.connect(addr)?))
            .collect::<Result<_, _>>()?,
    };
    let (rows, traces) = results.into_iter().unzip();
    Ok(BenchmarkOutput { rows, traces })
}

fn noisy_run<O: Oracle>(
    cfg: &ExperimentConfig,
    cell: Option<(f64, f64)>,
    d_hat: usize,
    rep: usize,
    seed: u64,
    truth: Option<&NecessarySet>,
    mut oracle: O,
) -> Result<(ExperimentRow, RunTrace), HarnessError> {
    let n = oracle.size();
    let universe: Vec<ConditionId> = (0..n).collect();
    let adaptive = AdaptiveConfig { d_hat, rng_seed: search_seed(cfg.seed, rep), ..cfg.adaptive };
    let start = Instant::now();
    let run = run_adaptive_barinel(&universe, &adaptive, &mut oracle, truth)?;
    let wall_time = start.elapsed();
    let m = metrics(&run.posterior.top_set, truth);
    let row = ExperimentRow {
        algorithm: ALGO_ADAPTIVE,
        oracle: cfg.oracle.to_string(),
        n,
        d_true: cfg.d_true,
        d_hat,
        mu: cell.map(|c| c.0),
        sigma: cell.map(|c| c.1),
        rep,
        seed,
        tests_used: run.tests_used(),
        recall: m.map(|m| m.recall),
        precision: m.map(|m| m.precision),
        exact_recovery: exact(m),
        first_full_recall: run.first_full_recall(),
        converged: Some(run.converged),
        wall_time,
    };
    let trace = RunTrace { mu: row.mu, sigma: row.sigma, d_hat, rep, trace: run.trace };
    Ok((row, trace))
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

const ROW_HEADER: [&str; 15] = [
    "algorithm",
    "oracle",
    "n",
    "d_true",
    "d_hat",
    "mu",
    "sigma",
    "rep",
    "seed",
    "tests_used",
    "recall",
    "precision",
    "exact_recovery",
    "first_full_recall",
    "converged",
];

fn row_record(r: &ExperimentRow) -> Vec<String> {
    vec![
        r.algorithm.to_string(),
        r.oracle.clone(),
        r.n.to_string(),
        opt(r.d_true),
        r.d_hat.to_string(),
        opt(r.mu),
        opt(r.sigma),
        r.rep.to_string(),
        r.seed.to_string(),
        r.tests_used.to_string(),
        opt(r.recall),
        opt(r.precision),
        opt(r.exact_recovery),
        opt(r.first_full_recall),
        opt(r.converged),
    ]
}

/// Aggregate over the repetitions of one (algorithm, d_hat, mu, sigma) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub algorithm: &'static str,
    pub n: usize,
    pub d_true: Option<usize>,
    pub d_hat: usize,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub runs: usize,
    pub tests_used: (f64, f64),
    pub recall: Option<(f64, f64)>,
    pub precision: Option<(f64, f64)>,
    pub exact_rate: Option<f64>,
    /// Median over runs, counting runs that never reached full recall as
    /// infinitely late.
    pub first_full_recall_median: Option<f64>,
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median with `None` ordered after every value.
pub fn median_with_missing(values: &[Option<usize>]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |x| x as f64)).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

/// Group rows into cells in order of first appearance.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<SummaryCell> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<&ExperimentRow>> = Vec::new();
    for r in rows {
        let key = format!("{}|{}|{}|{:?}|{:?}", r.algorithm, r.n, r.d_hat, r.mu, r.sigma);
        let i = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[i].push(r);
    }
    groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let stat = |f: fn(&ExperimentRow) -> Option<f64>| -> Option<(f64, f64)> {
                let v: Option<Vec<f64>> = g.iter().map(|r| f(r)).collect();
                v.map(|v| mean_sd(&v))
            };
            let tests: Vec<f64> = g.iter().map(|r| r.tests_used as f64).collect();
            let exact: Option<Vec<f64>> =
                g.iter().map(|r| r.exact_recovery.map(|e| if e { 1.0 } else { 0.0 })).collect();
            let adaptive = g.iter().all(|r| r.algorithm == ALGO_ADAPTIVE) && g.iter().all(|r| r.recall.is_some());
            SummaryCell {
                algorithm: first.algorithm,
                n: first.n,
                d_true: first.d_true,
                d_hat: first.d_hat,
                mu: first.mu,
                sigma: first.sigma,
                runs: g.len(),
                tests_used: mean_sd(&tests),
                recall: stat(|r| r.recall),
                precision: stat(|r| r.precision),
                exact_rate: exact.map(|v| mean_sd(&v).0),
                first_full_recall_median: adaptive.then(|| {
                    median_with_missing(&g.iter().map(|r| r.first_full_recall).collect::<Vec<_>>())
                }),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 16] = [
    "algorithm",
    "n",
    "d_true",
    "d_hat",
    "mu",
    "sigma",
    "runs",
    "tests_used_mean",
    "tests_used_sd",
    "recall_mean",
    "recall_sd",
    "precision_mean",
    "precision_sd",
    "exact_rate",
    "first_full_recall_median",
    "first_full_recall_missing",
];

fn csv_bytes<I>(header: &[&str], records: I) -> Result<Vec<u8>, HarnessError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

fn summary_bytes(rows: &[ExperimentRow]) -> Result<Vec<u8>, HarnessError> {
    let cells = summarize(rows);
    let missing = |c: &SummaryCell| {
        c.first_full_recall_median.map(|_| {
            rows.iter()
                .filter(|r| r.algorithm == c.algorithm && r.d_hat == c.d_hat && r.mu == c.mu && r.sigma == c.sigma)
                .filter(|r| r.first_full_recall.is_none())
                .count()
        })
    };
    csv_bytes(
        &SUMMARY_HEADER,
        cells.iter().map(|c| {
            vec![
                c.algorithm.to_string(),
                c.n.to_string(),
                opt(c.d_true),
                c.d_hat.to_string(),
                opt(c.mu),
                opt(c.sigma),
                c.runs.to_string(),
                c.tests_used.0.to_string(),
                c.tests_used.1.to_string(),
                opt(c.recall.map(|s| s.0)),
                opt(c.recall.map(|s| s.1)),
                opt(c.precision.map(|s| s.0)),
                opt(c.precision.map(|s| s.1)),
                opt(c.exact_rate),
                opt(c.first_full_recall_median),
                opt(missing(c)),
            ]
        }),
    )
}

fn trace_bytes(traces: &[RunTrace]) -> Result<Vec<u8>, HarnessError> {
    let header = [
        "mu",
        "sigma",
        "d_hat",
        "rep",
        "iteration",
        "epsilon",
        "mode",
        "outcome",
        "recall",
        "precision",
        "tests_used",
    ];
    csv_bytes(
        &header,
        traces.iter().flat_map(|t| {
            t.trace.iter().map(move |it| {
                vec![
                    opt(t.mu),
                    opt(t.sigma),
                    t.d_hat.to_string(),
                    t.rep.to_string(),
                    it.iteration.to_string(),
                    it.epsilon.to_string(),
                    it.mode.to_string(),
                    it.outcome.to_string(),
                    opt(it.recall),
                    opt(it.precision),
                    it.tests_used.to_string(),
                ]
            })
        }),
    )
}

fn timing_bytes(rows: &[ExperimentRow]) -> Result<Vec<u8>, HarnessError> {
    csv_bytes(
        &["algorithm", "d_hat", "mu", "sigma", "rep", "wall_time_s"],
        rows.iter().map(|r| {
            vec![
                r.algorithm.to_string(),
                r.d_hat.to_string(),
                opt(r.mu),
                opt(r.sigma),
                r.rep.to_string(),
                format!("{:.6}", r.wall_time.as_secs_f64()),
            ]
        }),
    )
}

fn run_meta(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "rng_algorithm = {RNG_ALGORITHM}");
    let _ = writeln!(out, "instance_seed = derive_seed(seed, [rep])");
    let _ = writeln!(out, "search_seed = derive_seed(seed, [rep, 1])");
    let _ = writeln!(out, "tests_used = every oracle test, adaptive bootstrap included");
    let _ = writeln!(out, "trace_iteration = loop iteration after bootstrap, starting at 1");
    let _ = writeln!(out, "wall_time = timings.csv (not reproducible)");
    out.push_str("\n[config]\n");
    out.push_str(&cfg.to_text());
    out
}

/// Deterministic report files, by name. Row files are `noiseless.csv` for
/// splitting runs and `noisy.csv` plus `noisy_traces.csv` for adaptive runs.
pub fn render_report(
    out: &BenchmarkOutput,
    cfg: &ExperimentConfig,
) -> Result<Vec<(&'static str, Vec<u8>)>, HarnessError> {
    if out.rows.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    let (noisy, noiseless): (Vec<&ExperimentRow>, Vec<&ExperimentRow>) =
        out.rows.iter().partition(|r| r.algorithm == ALGO_ADAPTIVE);
    let mut files = Vec::new();
    if !noiseless.is_empty() {
        files.push(("noiseless.csv", csv_bytes(&ROW_HEADER, noiseless.into_iter().map(row_record))?));
    }
    if !noisy.is_empty() {
        files.push(("noisy.csv", csv_bytes(&ROW_HEADER, noisy.into_iter().map(row_record))?));
        files.push(("noisy_traces.csv", trace_bytes(&out.traces)?));
    }
    files.push(("summary.csv", summary_bytes(&out.rows)?));
    files.push(("run_meta.txt", run_meta(cfg).into_bytes()));
    Ok(files)
}

/// Write the report plus `timings.csv` into `outdir`. Nothing is written
/// when there are no rows.
pub fn emit_report(
    out: &BenchmarkOutput,
    cfg: &ExperimentConfig,
    outdir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = render_report(out, cfg)?;
    files.push(("timings.csv", timing_bytes(&out.rows)?));
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir)?;
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = outdir.join(name);
            fs::write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}
