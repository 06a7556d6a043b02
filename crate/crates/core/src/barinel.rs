//! Spectrum-based diagnosis of an observation log.
//!
//! Blocked tests are conflicts: at least one condition they disabled is
//! necessary. Candidate diagnoses are minimal hitting sets of the conflicts
//! (generated Staccato-style, ranked by Ochiai similarity). Each candidate
//! gets per-component goodness factors fitted by maximum likelihood, and
//! candidates are ranked by posterior under an independent-fault prior.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{join_ids, ConditionId, ObservationLog, TestOutcome, TestRecord};

#[derive(Debug, Error, PartialEq)]
pub enum BarinelError {
    #[error("record {record} is Blocked but disabled nothing")]
    Inconsistent { record: usize },
    #[error("likelihood is not finite at record {record}")]
    NonFinite { record: usize },
    #[error("{components} distinct components exceed the exhaustive limit of {limit}")]
    TooLarge { components: usize, limit: usize },
    #[error("a diagnosis needs at least one component")]
    EmptyDiagnosis,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("report export failed: {0}")]
    Export(String),
}

/// A candidate diagnosis: sorted, duplicate-free component ids.
pub type Candidate = Vec<ConditionId>;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub components: Candidate,
    pub goodness: BTreeMap<ConditionId, f64>,
    pub log_likelihood: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticReport {
    /// Sorted by descending posterior; ties go to the smaller diagnosis,
    /// then to the lexicographically smaller id list.
    pub diagnoses: Vec<Diagnosis>,
    /// Natural log of the normalizing constant the posteriors were divided by.
    pub log_normalization: f64,
}

impl DiagnosticReport {
    pub fn is_empty(&self) -> bool {
        self.diagnoses.is_empty()
    }

    /// CSV with columns `rank,posterior,components,goodness`; the last two
    /// are `;`-separated and aligned.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BarinelError> {
        let export = |e: csv::Error| BarinelError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "posterior", "components", "goodness"]).map_err(export)?;
        for (rank, d) in self.diagnoses.iter().enumerate() {
            let goodness = d
                .components
                .iter()
                .map(|j| d.goodness.get(j).map_or(String::new(), |g| g.to_string()))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                (rank + 1).to_string(),
                d.posterior.to_string(),
                join_ids(&d.components),
                goodness,
            ])
            .map_err(export)?;
        }
        w.flush().map_err(|e| BarinelError::Export(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub step_size: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub g_init: f64,
    /// Goodness values are kept inside `[delta, 1 - delta]`.
    pub delta: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { step_size: 0.1, stop_tol: 1e-6, max_iters: 1000, g_init: 0.5, delta: 1e-6 }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<(), BarinelError> {
        let ok = self.g_init > 0.0
            && self.g_init < 1.0
            && self.delta > 0.0
            && self.delta < 0.5
            && self.step_size > 0.0
            && self.stop_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(BarinelError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarinelConfig {
    pub mle: MleConfig,
    /// Prior probability that any single condition is necessary.
    pub prior: f64,
    /// Maximum number of candidates kept; `None` enumerates all.
    pub candidate_cap: Option<usize>,
}

impl Default for BarinelConfig {
    fn default() -> Self {
        Self { mle: MleConfig::default(), prior: 0.01, candidate_cap: Some(100) }
    }
}

/// Fixed-width bitset over condition ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn from_ids(n: usize, ids: &[ConditionId]) -> Self {
        let mut b = Self::new(n);
        ids.iter().for_each(|&j| b.set(j));
        b
    }

    fn set(&mut self, j: usize) {
        self.0[j / 64] |= 1 << (j % 64);
    }

    fn get(&self, j: usize) -> bool {
        self.0[j / 64] >> (j % 64) & 1 == 1
    }

    fn is_subset_of(&self, other: &Bits) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }

    fn is_empty_without(&self, excluded: &Bits) -> bool {
        self.0.iter().zip(&excluded.0).all(|(a, x)| a & !x == 0)
    }

    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }
}

/// Conflicts (traces of Blocked tests) after dropping duplicates and any
/// conflict that contains another, plus pass counts for the similarity ranking.
struct Spectrum {
    n: usize,
    conflicts: Vec<Bits>,
    all_conflicts: Vec<Bits>,
    passed_count: Vec<u32>,
}

impl Spectrum {
    fn from_log(log: &ObservationLog) -> Result<Self, BarinelError> {
        let n = log.n();
        let mut passed_count = vec![0u32; n];
        let mut raw = BTreeSet::new();
        for r in log.records() {
            let ids = r.spec.disabled_ids();
            match r.outcome {
                TestOutcome::Blocked => {
                    if ids.is_empty() {
                        return Err(BarinelError::Inconsistent { record: r.sequence_number });
                    }
                    raw.insert((ids.len(), Bits::from_ids(n, &ids)));
                }
                TestOutcome::Exploited => ids.iter().for_each(|&j| passed_count[j] += 1),
            }
        }
        // Ascending size, so any subset conflict is kept before its supersets.
        let mut conflicts: Vec<Bits> = Vec::new();
        for (_, c) in &raw {
            if !conflicts.iter().any(|k| k.is_subset_of(c)) {
                conflicts.push(c.clone());
            }
        }
        let all_conflicts = raw.into_iter().map(|(_, c)| c).collect();
        Ok(Self { n, conflicts, all_conflicts, passed_count })
    }

    fn ochiai(&self, failed_with: u32, failed_total: usize, j: usize) -> f64 {
        let denom = (failed_total as f64 * (failed_with + self.passed_count[j]) as f64).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            failed_with as f64 / denom
        }
    }

    /// Minimal hitting sets of `conflicts` using only components outside
    /// `excluded`, at most `cap` of them.
    fn staccato(&self, conflicts: &[&Bits], excluded: &Bits, cap: usize) -> Vec<Vec<usize>> {
        if conflicts.iter().any(|c| c.is_empty_without(excluded)) {
            return Vec::new();
        }
        let total = conflicts.len();
        let mut failed_with = vec![0u32; self.n];
        for c in conflicts {
            for j in c.ones().filter(|&j| !excluded.get(j)) {
                failed_with[j] += 1;
            }
        }
        let mut excluded = excluded.clone();
        let mut found: Vec<Vec<usize>> = Vec::new();
        let mut ranking = Vec::new();
        for (j, &k) in failed_with.iter().enumerate() {
            if k as usize == total {
                if found.len() < cap {
                    found.push(vec![j]);
                }
                excluded.set(j);
            } else if k > 0 {
                ranking.push((self.ochiai(k, total, j), j));
            }
        }
        ranking.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for (_, j) in ranking {
            if found.len() >= cap {
                break;
            }
            let quota = if cap == usize::MAX { cap } else { ((cap - found.len()) / 2).max(1) };
            excluded.set(j);
            let rest: Vec<&Bits> = conflicts.iter().copied().filter(|c| !c.get(j)).collect();
            for mut tail in self.staccato(&rest, &excluded, quota) {
                tail.push(j);
                tail.sort_unstable();
                if !found.iter().any(|d| is_subset(d, &tail)) {
                    found.push(tail);
                }
            }
        }
        found
    }

    /// Each member of `h` must be the only member hitting some conflict.
    fn is_minimal(&self, h: &[usize]) -> bool {
        h.iter().all(|&j| {
            self.conflicts
                .iter()
                .any(|c| c.get(j) && h.iter().filter(|&&k| c.get(k)).count() == 1)
        })
    }
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|x| big.binary_search(x).is_ok())
}

/// Candidate diagnoses for `log`: minimal hitting sets of the Blocked
/// traces, at most `cap` of them (`None` for all). With a cap, branches are
/// explored in descending Ochiai order with a halving quota per branch, so
/// the best-ranked components get most of the budget without monopolizing it.
pub fn staccato_candidates(log: &ObservationLog, cap: Option<usize>) -> Result<Vec<Candidate>, BarinelError> {
    let spectrum = Spectrum::from_log(log)?;
    if spectrum.conflicts.is_empty() {
        return Ok(Vec::new());
    }
    let cap = cap.unwrap_or(usize::MAX);
    let conflicts: Vec<&Bits> = spectrum.conflicts.iter().collect();
    let raw = spectrum.staccato(&conflicts, &Bits::new(spectrum.n), cap);
    let mut out: Vec<Candidate> = raw
        .into_iter()
        .filter(|h| spectrum.is_minimal(h))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    debug_assert!(out.iter().all(|h| spectrum.all_conflicts.iter().all(|c| h.iter().any(|&j| c.get(j)))));
    Ok(out)
}

/// Largest number of distinct conflict components the brute-force
/// enumerator accepts.
pub const EXHAUSTIVE_LIMIT: usize = 20;

/// Brute-force minimal hitting sets: walk all subsets of the components
/// that appear in any Blocked trace in increasing cardinality and keep each
/// hitting set that contains no smaller kept one.
pub fn exhaustive_minimal_hitting_sets(log: &ObservationLog) -> Result<Vec<Candidate>, BarinelError> {
    let mut conflicts: Vec<Vec<ConditionId>> = Vec::new();
    for r in log.records().iter().filter(|r| r.outcome.is_blocked()) {
        let trace = r.spec.disabled_ids();
        if trace.is_empty() {
            return Err(BarinelError::Inconsistent { record: r.sequence_number });
        }
        conflicts.push(trace);
    }
    let universe: Vec<ConditionId> =
        conflicts.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if universe.len() > EXHAUSTIVE_LIMIT {
        return Err(BarinelError::TooLarge { components: universe.len(), limit: EXHAUSTIVE_LIMIT });
    }
    if conflicts.is_empty() {
        return Ok(Vec::new());
    }
    let mut masks: Vec<u32> = (1..(1u32 << universe.len())).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let conflict_masks: Vec<u32> = conflicts
        .iter()
        .map(|c| c.iter().map(|j| 1u32 << universe.binary_search(j).unwrap()).fold(0, |a, b| a | b))
        .collect();
    let mut kept: Vec<u32> = Vec::new();
    for m in masks {
        if kept.iter().any(|&k| k & !m == 0) {
            continue;
        }
        if conflict_masks.iter().all(|&c| c & m != 0) {
            kept.push(m);
        }
    }
    let mut out: Vec<Candidate> = kept
        .into_iter()
        .map(|m| (0..universe.len()).filter(|i| m >> i & 1 == 1).map(|i| universe[i]).collect())
        .collect();
    out.sort_by(|a: &Candidate, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Probability of one observation given diagnosis `components` with
/// goodness factors `goodness`: the product of goodness over the diagnosis
/// members the test disabled for a passed (Exploited) test, one minus that
/// product for a failed (Blocked) test.
pub fn observation_likelihood(
    record: &TestRecord,
    components: &[ConditionId],
    goodness: &BTreeMap<ConditionId, f64>,
) -> f64 {
    let product: f64 = components
        .iter()
        .filter(|&&j| record.spec.is_disabled(j))
        .map(|j| goodness.get(j).copied().unwrap_or(1.0))
        .product();
    match record.outcome {
        TestOutcome::Exploited => product,
        TestOutcome::Blocked => 1.0 - product,
    }
}

/// Log-likelihood of a log under one diagnosis, as a function of its
/// goodness vector. Records are grouped by which diagnosis members they
/// disabled, so evaluation cost depends on the diagnosis size, not the log.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    components: Candidate,
    /// (member mask, passed count, failed count, first record index)
    patterns: Vec<(u64, f64, f64, usize)>,
}

impl LikelihoodModel {
    pub fn new(log: &ObservationLog, components: &[ConditionId]) -> Result<Self, BarinelError> {
        if components.is_empty() {
            return Err(BarinelError::EmptyDiagnosis);
        }
        if components.len() > 63 {
            return Err(BarinelError::TooLarge { components: components.len(), limit: 63 });
        }
        let mut grouped: HashMap<u64, (f64, f64, usize)> = HashMap::new();
        for r in log.records() {
            let mask = components
                .iter()
                .enumerate()
                .filter(|(_, &j)| r.spec.is_disabled(j))
                .fold(0u64, |m, (i, _)| m | 1 << i);
            let entry = grouped.entry(mask).or_insert((0.0, 0.0, r.sequence_number));
            match r.outcome {
                TestOutcome::Exploited => entry.0 += 1.0,
                TestOutcome::Blocked => entry.1 += 1.0,
            }
        }
        let mut patterns: Vec<_> = grouped.into_iter().map(|(m, (p, f, i))| (m, p, f, i)).collect();
        patterns.sort_by_key(|p| p.0);
        if let Some(p) = patterns.iter().find(|p| p.0 == 0 && p.2 > 0.0) {
            return Err(BarinelError::NonFinite { record: p.3 });
        }
        Ok(Self { components: components.to_vec(), patterns })
    }

    pub fn components(&self) -> &[ConditionId] {
        &self.components
    }

    fn product(mask: u64, g: &[f64]) -> f64 {
        g.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, v)| v).product()
    }

    pub fn log_likelihood(&self, g: &[f64]) -> f64 {
        self.patterns
            .iter()
            .map(|&(mask, passed, failed, _)| {
                let prod = Self::product(mask, g);
                let mut ll = 0.0;
                if passed > 0.0 {
                    ll += passed * prod.ln();
                }
                if failed > 0.0 {
                    ll += failed * (1.0 - prod).ln();
                }
                ll
            })
            .sum()
    }

    pub fn gradient(&self, g: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; g.len()];
        for &(mask, passed, failed, _) in &self.patterns {
            let prod = Self::product(mask, g);
            for (i, gi) in g.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1) {
                grad[i] += passed / gi - failed * (prod / gi) / (1.0 - prod);
            }
        }
        grad
    }

    fn first_record(&self) -> usize {
        self.patterns.first().map_or(0, |p| p.3)
    }
}

/// Fit goodness factors for `components` by projected gradient ascent on
/// the log-likelihood. Steps that do not achieve a sufficient increase are
/// halved, so the log-likelihood never decreases; accepted steps double the
/// step size for the next iteration.
pub fn fit_goodness(
    log: &ObservationLog,
    components: &[ConditionId],
    cfg: &MleConfig,
) -> Result<(BTreeMap<ConditionId, f64>, f64), BarinelError> {
    let model = LikelihoodModel::new(log, components)?;
    let (g, ll, _) = fit_model(&model, cfg)?;
    Ok((components.iter().copied().zip(g).collect(), ll))
}

/// As [`fit_goodness`], additionally returning the log-likelihood after
/// every accepted iteration.
pub fn fit_model(model: &LikelihoodModel, cfg: &MleConfig) -> Result<(Vec<f64>, f64, Vec<f64>), BarinelError> {
    const SUFFICIENT_INCREASE: f64 = 0.25;
    cfg.validate()?;
    let (lo, hi) = (cfg.delta, 1.0 - cfg.delta);
    let mut g = vec![cfg.g_init; model.components.len()];
    let mut ll = model.log_likelihood(&g);
    if !ll.is_finite() {
        return Err(BarinelError::NonFinite { record: model.first_record() });
    }
    let mut history = vec![ll];
    let mut step = cfg.step_size;
    for _ in 0..cfg.max_iters {
        let grad = model.gradient(&g);
        let (next, next_ll) = loop {
            let cand: Vec<f64> = g.iter().zip(&grad).map(|(x, d)| (x + step * d).clamp(lo, hi)).collect();
            let predicted: f64 = cand.iter().zip(&g).zip(&grad).map(|((c, x), d)| (c - x) * d).sum();
            let cand_ll = model.log_likelihood(&cand);
            if cand_ll.is_finite() && cand_ll >= ll + SUFFICIENT_INCREASE * predicted {
                break (cand, cand_ll);
            }
            step /= 2.0;
            if step < f64::MIN_POSITIVE {
                break (g.clone(), ll);
            }
        };
        let gain = next_ll - ll;
        g = next;
        ll = next_ll;
        history.push(ll);
        if gain <= cfg.stop_tol {
            break;
        }
        step *= 2.0;
    }
    Ok((g, ll, history))
}

fn compare_diagnoses(a: &Diagnosis, b: &Diagnosis) -> Ordering {
    b.posterior
        .partial_cmp(&a.posterior)
        .unwrap_or(Ordering::Equal)
        .then(a.components.len().cmp(&b.components.len()))
        .then_with(|| a.components.cmp(&b.components))
}

/// Fit every candidate and rank by posterior
/// `P(OBS|d) * p^|d| * (1-p)^(M-|d|)`, normalized over the candidates,
/// where `M` is the catalog size.
pub fn rank_diagnoses(
    candidates: &[Candidate],
    log: &ObservationLog,
    prior: f64,
    mle: &MleConfig,
) -> Result<DiagnosticReport, BarinelError> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(BarinelError::InvalidConfig(format!("prior {prior} outside (0, 1)")));
    }
    if candidates.is_empty() {
        return Ok(DiagnosticReport::default());
    }
    let m = log.n() as f64;
    let fitted: Vec<(Diagnosis, f64)> = candidates
        .par_iter()
        .map(|c| {
            let (goodness, ll) = fit_goodness(log, c, mle)?;
            let size = c.len() as f64;
            let log_post = ll + size * prior.ln() + (m - size) * (1.0 - prior).ln();
            let d = Diagnosis { components: c.clone(), goodness, log_likelihood: ll, posterior: 0.0 };
            Ok((d, log_post))
        })
        .collect::<Result<_, BarinelError>>()?;
    let max = fitted.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
    let log_normalization = max + fitted.iter().map(|f| (f.1 - max).exp()).sum::<f64>().ln();
    let mut diagnoses: Vec<Diagnosis> = fitted
        .into_iter()
        .map(|(mut d, lp)| {
            d.posterior = (lp - log_normalization).exp();
            d
        })
        .collect();
    diagnoses.sort_by(compare_diagnoses);
    Ok(DiagnosticReport { diagnoses, log_normalization })
}

/// Candidate generation followed by ranking.
pub fn diagnose(log: &ObservationLog, cfg: &BarinelConfig) -> Result<DiagnosticReport, BarinelError> {
    let candidates = staccato_candidates(log, cfg.candidate_cap)?;
    rank_diagnoses(&candidates, log, cfg.prior, &cfg.mle)
}
