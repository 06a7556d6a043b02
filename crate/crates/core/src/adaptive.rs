//! Adaptive Barinel: noisy search that alternates random group tests
//! (exploration) with singleton tests of the current suspects
//! (exploitation), re-diagnosing the growing log every few iterations.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::barinel::{diagnose, BarinelConfig, BarinelError, DiagnosticReport};
use crate::model::{recall_precision, ConditionId, NecessarySet, ObservationLog, TestOutcome, TestSpec};
use crate::oracle::{seeded_rng, Oracle, OracleError};
use crate::splitting::group_exponent;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle failed after {} tests: {source}", partial.len())]
    Oracle {
        source: OracleError,
        /// Everything observed before the failure.
        partial: Box<ObservationLog>,
    },
    #[error(transparent)]
    Diagnosis(#[from] BarinelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    /// Estimated number of necessary conditions; sets the group size and |T|.
    pub d_hat: usize,
    pub epsilon0: f64,
    /// Multiplicative decay applied to the exploration ratio every iteration.
    pub decay: f64,
    pub epsilon_min: f64,
    pub bootstrap_len: usize,
    pub decode_freq: usize,
    /// Iteration budget, not counting bootstrap tests.
    pub max_iters: usize,
    /// Number of consecutive decodes with an unchanged top set.
    pub convergence_window: usize,
    /// Blocked singleton tests required per top-set member.
    pub confirm_count: usize,
    pub rng_seed: u64,
    pub barinel: BarinelConfig,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            d_hat: 5,
            epsilon0: 0.9,
            decay: 0.995,
            epsilon_min: 0.1,
            bootstrap_len: 30,
            decode_freq: 10,
            max_iters: 3000,
            convergence_window: 3,
            confirm_count: 2,
            rng_seed: 0,
            barinel: BarinelConfig::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), AdaptiveError> {
        let fail = |m: &str| Err(AdaptiveError::InvalidConfig(m.to_string()));
        if self.d_hat == 0 {
            return fail("d_hat must be at least 1");
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon0 && self.epsilon0 <= 1.0) {
            return fail("need 0 <= epsilon_min <= epsilon0 <= 1");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail("decay must lie in (0, 1]");
        }
        if self.bootstrap_len == 0 || self.decode_freq == 0 {
            return fail("bootstrap length and decoding frequency must be at least 1");
        }
        if self.convergence_window == 0 {
            return fail("convergence window must be at least 1");
        }
        Ok(())
    }
}

/// Per-condition probability of being necessary, with the current top set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPosterior {
    pub probs: Vec<f64>,
    /// The `d_hat` most probable conditions with nonzero probability, by
    /// descending probability then ascending id.
    pub top_set: Vec<ConditionId>,
    /// Loop iteration at which this decode ran.
    pub iteration: usize,
}

impl ConditionPosterior {
    pub fn top_sorted(&self) -> Vec<ConditionId> {
        let mut t = self.top_set.clone();
        t.sort_unstable();
        t
    }
}

/// Sum the posteriors of every diagnosis that contains each condition.
pub fn probability_summation(report: &DiagnosticReport, n: usize, d_hat: usize) -> ConditionPosterior {
    let mut probs = vec![0.0; n];
    for d in &report.diagnoses {
        for &c in &d.components {
            probs[c] += d.posterior;
        }
    }
    probs.iter_mut().for_each(|p| *p = f64::clamp(*p, 0.0, 1.0));
    let mut order: Vec<ConditionId> = (0..n).filter(|&c| probs[c] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(d_hat);
    ConditionPosterior { probs, top_set: order, iteration: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Explore,
    Exploit,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Explore => "explore",
            SelectionMode::Exploit => "exploit",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// With probability `epsilon`, a group of `group_size` conditions drawn
/// without replacement from `universe` minus `top`; otherwise a singleton
/// drawn from `top`. An empty `top` forces exploration and an exhausted
/// complement forces exploitation.
pub fn epsilon_greedy_select<R: Rng + ?Sized>(
    top: &[ConditionId],
    universe: &[ConditionId],
    n: usize,
    epsilon: f64,
    group_size: usize,
    rng: &mut R,
) -> (TestSpec, SelectionMode) {
    let roll = rng.random::<f64>();
    let outside: Vec<ConditionId> = universe.iter().copied().filter(|c| !top.contains(c)).collect();
    let explore = (top.is_empty() || roll < epsilon) && !outside.is_empty();
    if explore {
        let k = group_size.clamp(1, outside.len());
        let ids: Vec<ConditionId> = index::sample(rng, outside.len(), k).into_iter().map(|i| outside[i]).collect();
        (TestSpec::from_ids(n, &ids).expect("universe ids fit the catalog"), SelectionMode::Explore)
    } else if top.is_empty() {
        (TestSpec::from_ids(n, &[]).expect("empty spec"), SelectionMode::Explore)
    } else {
        let pick = top[rng.random_range(0..top.len())];
        (TestSpec::from_ids(n, &[pick]).expect("top ids fit the catalog"), SelectionMode::Exploit)
    }
}

/// Converged when the top set holds `d_hat` conditions, has been unchanged
/// over the last `convergence_window` decodes, and every member has at
/// least `confirm_count` Blocked singleton tests with no Exploited
/// singleton after its latest Blocked one. Always true once `iteration`
/// reaches the budget.
pub fn has_converged(
    history: &[ConditionPosterior],
    log: &ObservationLog,
    cfg: &AdaptiveConfig,
    iteration: usize,
) -> bool {
    if iteration >= cfg.max_iters {
        return true;
    }
    let w = cfg.convergence_window;
    if history.len() < w {
        return false;
    }
    let recent = &history[history.len() - w..];
    let top = recent[w - 1].top_sorted();
    if top.len() != cfg.d_hat || recent.iter().any(|p| p.top_sorted() != top) {
        return false;
    }
    top.iter().all(|&c| {
        let mut blocked = 0;
        let mut last_blocked = None;
        let mut last_exploited = None;
        for r in log.records() {
            if r.spec.is_disabled(c) && r.spec.disabled_count() == 1 {
                match r.outcome {
                    TestOutcome::Blocked => {
                        blocked += 1;
                        last_blocked = Some(r.sequence_number);
                    }
                    TestOutcome::Exploited => last_exploited = Some(r.sequence_number),
                }
            }
        }
        blocked >= cfg.confirm_count && last_exploited < last_blocked
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub epsilon: f64,
    pub mode: SelectionMode,
    pub outcome: TestOutcome,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    /// Total tests so far, bootstrap included.
    pub tests_used: usize,
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub posterior: ConditionPosterior,
    pub log: ObservationLog,
    pub trace: Vec<IterationTrace>,
    pub converged: bool,
    pub decodes: usize,
}

impl AdaptiveRun {
    pub fn tests_used(&self) -> usize {
        self.log.len()
    }

    /// Tests used (bootstrap included) when the top set first matched the
    /// truth exactly in recall, if it ever did.
    pub fn first_full_recall(&self) -> Option<usize> {
        self.trace.iter().find(|t| t.recall == Some(1.0)).map(|t| t.tests_used)
    }
}

/// Run the adaptive loop over `universe` (a subset of the oracle's catalog).
/// When `truth` is given, recall and precision of the current top set are
/// recorded after every iteration; the search itself never reads it.
pub fn run_adaptive_barinel<O: Oracle + ?Sized>(
    universe: &[ConditionId],
    cfg: &AdaptiveConfig,
    oracle: &mut O,
    truth: Option<&NecessarySet>,
) -> Result<AdaptiveRun, AdaptiveError> {
    cfg.validate()?;
    let n = oracle.size();
    if universe.is_empty() || universe.iter().any(|&c| c >= n) {
        return Err(AdaptiveError::InvalidConfig("universe must be non-empty ids within the catalog".into()));
    }
    let group_size = 1usize << group_exponent(universe.len(), cfg.d_hat);
    let mut rng = seeded_rng(cfg.rng_seed);
    let mut log = ObservationLog::new(n);

    let mut run_test = |spec: TestSpec, log: &mut ObservationLog| -> Result<TestOutcome, AdaptiveError> {
        match oracle.execute(&spec) {
            Ok(outcome) => {
                log.push(spec, outcome).expect("spec sized to the catalog");
                Ok(outcome)
            }
            Err(source) => Err(AdaptiveError::Oracle { source, partial: Box::new(log.clone()) }),
        }
    };

    for _ in 0..cfg.bootstrap_len {
        let k = group_size.min(universe.len());
        let ids: Vec<ConditionId> =
            index::sample(&mut rng, universe.len(), k).into_iter().map(|i| universe[i]).collect();
        run_test(TestSpec::from_ids(n, &ids).expect("universe ids fit the catalog"), &mut log)?;
    }

    let decode = |log: &ObservationLog, iteration: usize| -> Result<ConditionPosterior, AdaptiveError> {
        let report = diagnose(log, &cfg.barinel)?;
        let mut p = probability_summation(&report, n, cfg.d_hat);
        p.iteration = iteration;
        Ok(p)
    };

    let mut epsilon = cfg.epsilon0;
    let mut history: Vec<ConditionPosterior> = Vec::new();
    let mut trace = Vec::new();
    let mut top: Vec<ConditionId> = Vec::new();
    let mut iteration = 0;
    let converged = loop {
        if iteration % cfg.decode_freq == 0 {
            let p = decode(&log, iteration)?;
            top = p.top_set.clone();
            history.push(p);
            if iteration < cfg.max_iters && has_converged(&history, &log, cfg, iteration) {
                break true;
            }
        }
        if iteration >= cfg.max_iters {
            break false;
        }
        let (spec, mode) = epsilon_greedy_select(&top, universe, n, epsilon, group_size, &mut rng);
        let outcome = run_test(spec, &mut log)?;
        iteration += 1;
        let metrics = truth.map(|t| recall_precision(&top, t).expect("top set ids are in range"));
        trace.push(IterationTrace {
            iteration,
            epsilon,
            mode,
            outcome,
            recall: metrics.map(|m| m.recall),
            precision: metrics.map(|m| m.precision),
            tests_used: log.len(),
        });
        epsilon = f64::max(cfg.epsilon_min, epsilon * cfg.decay);
    };
    let decodes = history.len();
    let posterior = history.pop().expect("at least one decode ran");
    Ok(AdaptiveRun { posterior, log, trace, converged, decodes })
}
