//! Noiseless adaptive group testing: binary splitting, generalized binary
//! splitting and the residual check that recovers from an underestimated
//! defective budget.
//!
//! Every group tested is a prefix of the current candidate order, so a run
//! is a deterministic function of the item order and the oracle.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{ConditionId, TestOutcome, TestSpec};
use crate::oracle::{Oracle, OracleError};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("defective budget must be at least 1")]
    InvalidBudget,
    #[error("binary splitting needs a non-empty contaminated group")]
    EmptyGroup,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSearchConfig {
    /// Upper bound on the number of defectives handled by one pass.
    pub d_hat: usize,
    /// Budget for each rerun after a positive residual test; `None` reuses `d_hat`.
    pub rerun_budget: Option<usize>,
}

impl SplitSearchConfig {
    pub fn new(d_hat: usize) -> Self {
        Self { d_hat, rerun_budget: None }
    }

    fn rerun(&self) -> usize {
        self.rerun_budget.unwrap_or(self.d_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSearchResult {
    pub defectives: BTreeSet<ConditionId>,
    pub tests_used: usize,
    /// Some residual test came back Blocked, i.e. the budget was too small.
    pub residual_positive: bool,
    /// Items never classified because the pass ran out of budget.
    pub undecided: Vec<ConditionId>,
}

impl SplitSearchResult {
    pub fn defective_ids(&self) -> Vec<ConditionId> {
        self.defectives.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinarySplit {
    pub defective: ConditionId,
    /// Items before `defective` in the group, all proven clean.
    pub eliminated: usize,
    pub tests_used: usize,
}

fn test_group<O: Oracle + ?Sized>(oracle: &mut O, ids: &[ConditionId]) -> Result<TestOutcome, SplitError> {
    let spec = TestSpec::from_ids(oracle.size(), ids).map_err(OracleError::from)?;
    Ok(oracle.execute(&spec)?)
}

/// `ceil(log2(m))` for `m >= 1`.
fn ceil_log2(m: usize) -> u32 {
    usize::BITS - (m - 1).leading_zeros()
}

/// Exponent of the group size for `n` remaining items and budget `d_hat`:
/// `floor(log2((n - d_hat + 1) / d_hat))`, never below zero.
pub fn group_exponent(n: usize, d_hat: usize) -> u32 {
    let l = (n + 1).saturating_sub(d_hat);
    let ratio = l / d_hat.max(1);
    if ratio == 0 {
        0
    } else {
        ratio.ilog2()
    }
}

/// Locate one defective in a group known to contain at least one.
///
/// Tests the left part (size `2^(ceil(log2 m) - 1)`) of the current window;
/// a Blocked result narrows to it, an Exploited result eliminates it and the
/// right part is contaminated by inference. Items right of the window when
/// it narrows stay undecided.
pub fn binary_split_once<O: Oracle + ?Sized>(
    contaminated: &[ConditionId],
    oracle: &mut O,
) -> Result<BinarySplit, SplitError> {
    if contaminated.is_empty() {
        return Err(SplitError::EmptyGroup);
    }
    let (mut lo, mut hi) = (0, contaminated.len());
    let mut tests_used = 0;
    while hi - lo > 1 {
        let left = 1usize << (ceil_log2(hi - lo) - 1);
        tests_used += 1;
        if test_group(oracle, &contaminated[lo..lo + left])?.is_blocked() {
            hi = lo + left;
        } else {
            lo += left;
        }
    }
    Ok(BinarySplit { defective: contaminated[lo], eliminated: lo, tests_used })
}

/// One singleton test per item.
pub fn individual_testing<O: Oracle + ?Sized>(
    items: &[ConditionId],
    oracle: &mut O,
) -> Result<(BTreeSet<ConditionId>, usize), SplitError> {
    let mut found = BTreeSet::new();
    for &item in items {
        if test_group(oracle, &[item])?.is_blocked() {
            found.insert(item);
        }
    }
    Ok((found, items.len()))
}

/// A single generalized-binary-splitting pass over `items` with budget
/// `cfg.d_hat`. Finds every defective when there are at most `d_hat` of
/// them; otherwise stops after `d_hat` finds and reports the rest as
/// `undecided`.
pub fn generalized_binary_splitting<O: Oracle + ?Sized>(
    items: &[ConditionId],
    cfg: &SplitSearchConfig,
    oracle: &mut O,
) -> Result<SplitSearchResult, SplitError> {
    if cfg.d_hat == 0 {
        return Err(SplitError::InvalidBudget);
    }
    let mut result = SplitSearchResult::default();
    let mut budget = cfg.d_hat;
    let mut start = 0;
    while budget > 0 && start < items.len() {
        let remaining = &items[start..];
        let n = remaining.len();
        // n <= 2d-2 per the classic rule; n = 2d-1 also goes here since the
        // group size would be 1 anyway.
        if n < 2 * budget {
            let (found, tests) = individual_testing(remaining, oracle)?;
            result.defectives.extend(found);
            result.tests_used += tests;
            start = items.len();
            break;
        }
        let size = (1usize << group_exponent(n, budget)).min(n);
        result.tests_used += 1;
        if test_group(oracle, &remaining[..size])?.is_blocked() {
            let split = binary_split_once(&remaining[..size], oracle)?;
            result.tests_used += split.tests_used;
            result.defectives.insert(split.defective);
            start += split.eliminated + 1;
            budget -= 1;
        } else {
            start += size;
        }
    }
    result.undecided = items[start..].to_vec();
    Ok(result)
}

/// Test everything left over after an exhausted pass; while that test is
/// Blocked, run another pass on the remainder with the rerun budget.
pub fn residual_check<O: Oracle + ?Sized>(
    remaining: &[ConditionId],
    cfg: &SplitSearchConfig,
    oracle: &mut O,
) -> Result<SplitSearchResult, SplitError> {
    let rerun = SplitSearchConfig::new(cfg.rerun());
    if rerun.d_hat == 0 {
        return Err(SplitError::InvalidBudget);
    }
    let mut result = SplitSearchResult::default();
    let mut left = remaining.to_vec();
    while !left.is_empty() {
        result.tests_used += 1;
        if !test_group(oracle, &left)?.is_blocked() {
            break;
        }
        result.residual_positive = true;
        let pass = generalized_binary_splitting(&left, &rerun, oracle)?;
        result.tests_used += pass.tests_used;
        result.defectives.extend(pass.defectives);
        left = pass.undecided;
    }
    Ok(result)
}

/// Generalized binary splitting followed by residual recovery: returns the
/// exact defective set for any `d_hat >= 1` against a noiseless oracle.
pub fn find_necessary<O: Oracle + ?Sized>(
    items: &[ConditionId],
    cfg: &SplitSearchConfig,
    oracle: &mut O,
) -> Result<SplitSearchResult, SplitError> {
    let mut result = generalized_binary_splitting(items, cfg, oracle)?;
    if !result.undecided.is_empty() {
        let residual = residual_check(&result.undecided, cfg, oracle)?;
        result.tests_used += residual.tests_used;
        result.defectives.extend(residual.defectives);
        result.residual_positive = residual.residual_positive;
        result.undecided.clear();
    }
    Ok(result)
}

/// Baseline: run binary splitting `d` times over the shrinking candidate
/// list, relying on the known defective count for contamination.
pub fn repeated_binary_splitting<O: Oracle + ?Sized>(
    items: &[ConditionId],
    d: usize,
    oracle: &mut O,
) -> Result<SplitSearchResult, SplitError> {
    let mut result = SplitSearchResult::default();
    let mut start = 0;
    for _ in 0..d {
        if start >= items.len() {
            break;
        }
        let split = binary_split_once(&items[start..], oracle)?;
        result.tests_used += split.tests_used;
        result.defectives.insert(split.defective);
        start += split.eliminated + 1;
    }
    result.undecided = items[start..].to_vec();
    Ok(result)
}
