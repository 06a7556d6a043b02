//! Domain types shared by every search strategy: the condition catalog,
//! ground truth, test specifications and the observation log, plus
//! instance validation and recall/precision metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 0-based index into a [`ConditionCatalog`].
pub type ConditionId = usize;

const CATALOG_HEADER: &str = "#precond-catalog v1";
const LOG_HEADER: &str = "#precond-log v1";

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("condition id {id} out of range for catalog of size {n}")]
    IdOutOfRange { id: ConditionId, n: usize },
    #[error("vector length {found} does not match catalog size {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// Coarse classification of a togglable environmental condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionGroup {
    AccessControl,
    Connectivity,
    Services,
    Safeguards,
    Packages,
    Other,
}

impl ConditionGroup {
    pub const ALL: [ConditionGroup; 6] = [
        ConditionGroup::AccessControl,
        ConditionGroup::Connectivity,
        ConditionGroup::Services,
        ConditionGroup::Safeguards,
        ConditionGroup::Packages,
        ConditionGroup::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionGroup::AccessControl => "access-control",
            ConditionGroup::Connectivity => "connectivity",
            ConditionGroup::Services => "services",
            ConditionGroup::Safeguards => "safeguards",
            ConditionGroup::Packages => "packages",
            ConditionGroup::Other => "other",
        }
    }
}

impl fmt::Display for ConditionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown condition group `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionDescriptor {
    pub id: ConditionId,
    pub group: ConditionGroup,
    pub label: String,
}

/// The ordered universe of conditions a search ranges over.
///
/// Ids are exactly `0..n` in order and labels are unique; both are
/// enforced on construction so a catalog value is always well formed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionCatalog {
    conditions: Vec<ConditionDescriptor>,
}

impl ConditionCatalog {
    pub fn new(conditions: Vec<ConditionDescriptor>) -> Result<Self, ModelError> {
        let violations = catalog_violations(&conditions);
        if let Some(v) = violations.into_iter().next() {
            return Err(ModelError::InvalidCatalog(v.to_string()));
        }
        Ok(Self { conditions })
    }

    /// A catalog of `n` placeholder conditions labelled `cond-0000`, `cond-0001`, ...
    /// with groups assigned round-robin.
    pub fn synthetic(n: usize) -> Self {
        let conditions = (0..n)
            .map(|id| ConditionDescriptor {
                id,
                group: ConditionGroup::ALL[id % 5],
                label: format!("cond-{id:04}"),
            })
            .collect();
        Self { conditions }
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn get(&self, id: ConditionId) -> Option<&ConditionDescriptor> {
        self.conditions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConditionDescriptor> {
        self.conditions.iter()
    }

    pub fn label(&self, id: ConditionId) -> &str {
        self.conditions.get(id).map_or("?", |c| c.label.as_str())
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == CATALOG_HEADER => {}
            _ => {
                return Err(ModelError::Parse {
                    line: 1,
                    message: format!("expected header `{CATALOG_HEADER}`"),
                })
            }
        }
        let mut conditions = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| ModelError::Parse { line: idx + 1, message };
            let mut parts = line.splitn(3, ',');
            let (Some(id), Some(group), Some(label)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err("expected `id,group,label`".into()));
            };
            let id = id
                .trim()
                .parse::<ConditionId>()
                .map_err(|e| parse_err(format!("bad id: {e}")))?;
            let group = group.trim().parse::<ConditionGroup>().map_err(parse_err)?;
            conditions.push(ConditionDescriptor { id, group, label: label.to_string() });
        }
        Self::new(conditions)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(CATALOG_HEADER);
        out.push('\n');
        for c in &self.conditions {
            out.push_str(&format!("{},{},{}\n", c.id, c.group, c.label));
        }
        out
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// The conditions whose presence the exploit requires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NecessarySet {
    flags: Vec<bool>,
    cardinality: usize,
}

impl NecessarySet {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        let cardinality = flags.iter().filter(|&&f| f).count();
        Self { flags, cardinality }
    }

    pub fn from_ids(n: usize, ids: &[ConditionId]) -> Result<Self, ModelError> {
        let mut flags = vec![false; n];
        for &id in ids {
            *flags.get_mut(id).ok_or(ModelError::IdOutOfRange { id, n })? = true;
        }
        Ok(Self::from_flags(flags))
    }

    pub fn empty(n: usize) -> Self {
        Self::from_flags(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn contains(&self, id: ConditionId) -> bool {
        self.flags.get(id).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn ids(&self) -> Vec<ConditionId> {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }
}

/// One hardened environment to submit to an oracle.
///
/// `disabled[j]` means the hardening action for condition `j` is applied,
/// i.e. the condition is switched off for this test.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TestSpec {
    disabled: Vec<bool>,
}

impl TestSpec {
    pub fn from_flags(disabled: Vec<bool>) -> Self {
        Self { disabled }
    }

    pub fn from_ids(n: usize, ids: &[ConditionId]) -> Result<Self, ModelError> {
        let mut disabled = vec![false; n];
        for &id in ids {
            *disabled.get_mut(id).ok_or(ModelError::IdOutOfRange { id, n })? = true;
        }
        Ok(Self { disabled })
    }

    pub fn len(&self) -> usize {
        self.disabled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disabled.is_empty()
    }

    pub fn is_disabled(&self, id: ConditionId) -> bool {
        self.disabled.get(id).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.disabled
    }

    pub fn disabled_ids(&self) -> Vec<ConditionId> {
        self.disabled.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect()
    }

    pub fn disabled_count(&self) -> usize {
        self.disabled.iter().filter(|&&d| d).count()
    }
}

/// Result of a single test.
///
/// `Blocked` is the positive group-testing result (1): the exploit failed,
/// which in fault-diagnosis terms is a failed run (`e_i = 1`). `Exploited`
/// is the negative result (0), a passed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOutcome {
    Blocked,
    Exploited,
}

impl TestOutcome {
    pub fn is_blocked(self) -> bool {
        matches!(self, TestOutcome::Blocked)
    }

    /// The 0/1 group-testing encoding (1 = Blocked).
    pub fn as_bit(self) -> u8 {
        u8::from(self.is_blocked())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestOutcome::Blocked => "blocked",
            TestOutcome::Exploited => "exploited",
        }
    }
}

impl fmt::Display for TestOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blocked" => Ok(TestOutcome::Blocked),
            "exploited" => Ok(TestOutcome::Exploited),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestRecord {
    pub spec: TestSpec,
    pub outcome: TestOutcome,
    pub sequence_number: usize,
}

/// Every test executed so far, in order. Stacked, the specs form the
/// activity matrix and the outcomes the error vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationLog {
    n: usize,
    records: Vec<TestRecord>,
}

impl ObservationLog {
    pub fn new(n: usize) -> Self {
        Self { n, records: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TestRecord] {
        &self.records
    }

    pub fn push(&mut self, spec: TestSpec, outcome: TestOutcome) -> Result<&TestRecord, ModelError> {
        if spec.len() != self.n {
            return Err(ModelError::LengthMismatch { expected: self.n, found: spec.len() });
        }
        let sequence_number = self.records.len();
        self.records.push(TestRecord { spec, outcome, sequence_number });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn blocked_count(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_blocked()).count()
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim_end() == LOG_HEADER => {}
            _ => {
                return Err(ModelError::Parse {
                    line: 1,
                    message: format!("expected header `{LOG_HEADER}`"),
                })
            }
        }
        let n = match lines.next() {
            Some((idx, l)) => l
                .trim()
                .strip_prefix("n=")
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or(ModelError::Parse { line: idx + 1, message: "expected `n=<size>`".into() })?,
            None => return Err(ModelError::Parse { line: 2, message: "missing `n=<size>`".into() }),
        };
        let mut log = Self::new(n);
        for (idx, line) in lines {
            let parse_err = |message: String| ModelError::Parse { line: idx + 1, message };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 3 {
                return Err(parse_err("expected `seq,outcome,ids`".into()));
            }
            let seq: usize = fields[0].parse().map_err(|e| parse_err(format!("bad sequence number: {e}")))?;
            if seq != log.len() {
                return Err(parse_err(format!("sequence number {seq}, expected {}", log.len())));
            }
            let outcome: TestOutcome = fields[1].parse().map_err(parse_err)?;
            let ids = parse_id_list(fields[2]).map_err(parse_err)?;
            let spec = TestSpec::from_ids(n, &ids)?;
            log.push(spec, outcome)?;
        }
        Ok(log)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{LOG_HEADER}\nn={}\n", self.n);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.sequence_number,
                r.outcome,
                join_ids(&r.spec.disabled_ids())
            ));
        }
        out
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// `;`-separated id list, the representation used in logs and reports.
pub fn join_ids(ids: &[ConditionId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_id_list(s: &str) -> Result<Vec<ConditionId>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| t.trim().parse::<ConditionId>().map_err(|e| format!("bad id `{t}`: {e}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub tests_used: usize,
}

/// Recall and precision of `estimate` against `truth`.
///
/// An empty truth gives recall 1 and an empty estimate gives precision 1.
/// `tests_used` is left at zero for the caller to fill in.
pub fn recall_precision(estimate: &[ConditionId], truth: &NecessarySet) -> Result<Metrics, ModelError> {
    let n = truth.len();
    let est: BTreeSet<ConditionId> = estimate.iter().copied().collect();
    if let Some(&id) = est.iter().find(|&&id| id >= n) {
        return Err(ModelError::IdOutOfRange { id, n });
    }
    let hits = est.iter().filter(|&&id| truth.contains(id)).count() as f64;
    let recall = if truth.cardinality() == 0 { 1.0 } else { hits / truth.cardinality() as f64 };
    let precision = if est.is_empty() { 1.0 } else { hits / est.len() as f64 };
    Ok(Metrics { recall, precision, tests_used: 0 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LengthMismatch { expected: usize, found: usize },
    IdNotDense { position: usize, id: ConditionId },
    DuplicateLabel(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Violation::IdNotDense { position, id } => {
                write!(f, "condition at position {position} has id {id}")
            }
            Violation::DuplicateLabel(l) => write!(f, "duplicate label `{l}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn catalog_violations(conditions: &[ConditionDescriptor]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut labels = BTreeSet::new();
    for (position, c) in conditions.iter().enumerate() {
        if c.id != position {
            out.push(Violation::IdNotDense { position, id: c.id });
        }
        if !labels.insert(c.label.as_str()) {
            out.push(Violation::DuplicateLabel(c.label.clone()));
        }
    }
    out
}

pub fn validate_instance(catalog: &ConditionCatalog, truth: &NecessarySet) -> Validation {
    let mut violations = catalog_violations(&catalog.conditions);
    if truth.len() != catalog.len() {
        violations.push(Violation::LengthMismatch { expected: catalog.len(), found: truth.len() });
    }
    Validation { violations }
}
