//! Test oracles: something that answers whether the exploit still succeeds
//! under a hardened environment.
//!
//! [`SimulatedOracle`] draws outcomes from the per-condition dilution noise
//! model; [`wire::ExternalSession`] forwards each test to a remote rig over
//! newline-delimited JSON.

pub mod wire;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{
    ConditionCatalog, ConditionId, ModelError, NecessarySet, ObservationLog, TestOutcome, TestSpec,
};

pub use wire::{ExternalSession, LoopbackServer, ProtocolError};

/// Generator used for every seeded draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Identifier written into run metadata so results can be replayed.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64";

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derive an independent child seed from a base seed and a stream path,
/// folding each component through the SplitMix64 finalizer.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    stream.iter().fold(mix(base), |acc, &s| mix(acc ^ mix(s)))
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("test spec length {found} does not match catalog size {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl OracleError {
    /// Transport failures may succeed on a fresh connection; nothing else will.
    pub fn is_retriable(&self) -> bool {
        matches!(self, OracleError::Transport(_))
    }
}

/// Per-condition dilution probabilities: `epsilons[i]` is the chance that
/// disabling necessary condition `i` fails to take effect.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    epsilons: Vec<f64>,
}

impl NoiseProfile {
    pub fn noiseless(n: usize) -> Self {
        Self { epsilons: vec![0.0; n] }
    }

    pub fn new(epsilons: Vec<f64>) -> Result<Self, OracleError> {
        if let Some((i, e)) = epsilons.iter().enumerate().find(|(_, e)| !(0.0..=1.0).contains(*e)) {
            return Err(OracleError::InvalidNoise(format!("epsilon[{i}] = {e} outside [0, 1]")));
        }
        Ok(Self { epsilons })
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn epsilon(&self, id: ConditionId) -> f64 {
        self.epsilons[id]
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn is_noiseless(&self) -> bool {
        self.epsilons.iter().all(|&e| e == 0.0)
    }
}

/// Folded-Gaussian noise: each epsilon is `|N(mu, sigma^2)|`, clamped to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseSpec {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

pub fn sample_noise_profile(spec: GaussianNoiseSpec, n: usize) -> Result<NoiseProfile, OracleError> {
    if n == 0 {
        return Err(OracleError::InvalidNoise("profile size must be positive".into()));
    }
    if spec.sigma.is_nan() || spec.sigma < 0.0 || !spec.mu.is_finite() {
        return Err(OracleError::InvalidNoise(format!(
            "need finite mu and sigma >= 0, got mu={} sigma={}",
            spec.mu, spec.sigma
        )));
    }
    let normal = Normal::new(spec.mu, spec.sigma).map_err(|e| OracleError::InvalidNoise(e.to_string()))?;
    let mut rng = seeded_rng(spec.seed);
    let epsilons = (0..n).map(|_| normal.sample(&mut rng).abs().min(1.0)).collect();
    NoiseProfile::new(epsilons)
}

/// Ground truth plus noise: the secret a simulated oracle answers from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub catalog: ConditionCatalog,
    pub truth: NecessarySet,
    pub noise: NoiseProfile,
    pub rng_seed: u64,
}

impl ProblemInstance {
    pub fn new(
        catalog: ConditionCatalog,
        truth: NecessarySet,
        noise: NoiseProfile,
        rng_seed: u64,
    ) -> Result<Self, OracleError> {
        let n = catalog.len();
        for found in [truth.len(), noise.len()] {
            if found != n {
                return Err(OracleError::LengthMismatch { expected: n, found });
            }
        }
        Ok(Self { catalog, truth, noise, rng_seed })
    }

    pub fn noiseless(truth: NecessarySet, rng_seed: u64) -> Self {
        let n = truth.len();
        Self {
            catalog: ConditionCatalog::synthetic(n),
            truth,
            noise: NoiseProfile::noiseless(n),
            rng_seed,
        }
    }

    /// A synthetic instance with `d` necessary conditions placed uniformly at
    /// random. Truth placement, noise and the outcome stream use seeds derived
    /// from `seed`.
    pub fn random(n: usize, d: usize, noise: Option<(f64, f64)>, seed: u64) -> Result<Self, OracleError> {
        if d > n {
            return Err(OracleError::InvalidNoise(format!("cannot place {d} necessary conditions among {n}")));
        }
        let mut rng = seeded_rng(derive_seed(seed, &[0]));
        let ids = index::sample(&mut rng, n, d).into_vec();
        let truth = NecessarySet::from_ids(n, &ids)?;
        let noise = match noise {
            Some((mu, sigma)) => {
                sample_noise_profile(GaussianNoiseSpec { mu, sigma, seed: derive_seed(seed, &[1]) }, n)?
            }
            None => NoiseProfile::noiseless(n),
        };
        Self::new(ConditionCatalog::synthetic(n), truth, noise, derive_seed(seed, &[2]))
    }

    pub fn n(&self) -> usize {
        self.catalog.len()
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise.is_noiseless()
    }

    fn check_len(&self, spec: &TestSpec) -> Result<(), OracleError> {
        if spec.len() != self.n() {
            return Err(OracleError::LengthMismatch { expected: self.n(), found: spec.len() });
        }
        Ok(())
    }

    /// Necessary conditions that `spec` disables.
    fn live_defectives<'a>(&'a self, spec: &'a TestSpec) -> impl Iterator<Item = ConditionId> + 'a {
        self.truth
            .flags()
            .iter()
            .zip(spec.flags())
            .enumerate()
            .filter(|(_, (&r, &e))| r && e)
            .map(|(j, _)| j)
    }
}

/// Probability that `spec` comes back Blocked: one minus the product of the
/// dilution probabilities of the necessary conditions it disables.
pub fn block_probability(instance: &ProblemInstance, spec: &TestSpec) -> Result<f64, OracleError> {
    instance.check_len(spec)?;
    let mut any = false;
    let mut all_dilute = 1.0;
    for j in instance.live_defectives(spec) {
        any = true;
        all_dilute *= instance.noise.epsilon(j);
    }
    Ok(if any { 1.0 - all_dilute } else { 0.0 })
}

/// Draw one outcome. Each disabled necessary condition independently
/// dilutes with its epsilon; the exploit succeeds only if all of them do.
/// Exactly one uniform draw is consumed per disabled necessary condition,
/// in id order.
pub fn execute_test_simulated<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    spec: &TestSpec,
    rng: &mut R,
) -> Result<TestOutcome, OracleError> {
    instance.check_len(spec)?;
    let mut blocked = false;
    for j in instance.live_defectives(spec) {
        let diluted = rng.random::<f64>() < instance.noise.epsilon(j);
        blocked |= !diluted;
    }
    Ok(if blocked { TestOutcome::Blocked } else { TestOutcome::Exploited })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleStats {
    pub tests_issued: usize,
    pub blocked_count: usize,
    pub exploited_count: usize,
}

impl OracleStats {
    pub fn record(&mut self, outcome: TestOutcome) {
        self.tests_issued += 1;
        match outcome {
            TestOutcome::Blocked => self.blocked_count += 1,
            TestOutcome::Exploited => self.exploited_count += 1,
        }
    }
}

/// Anything that can execute a test.
pub trait Oracle {
    /// Catalog size the oracle expects specs to match.
    fn size(&self) -> usize;

    fn execute(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError>;

    fn stats(&self) -> OracleStats;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn size(&self) -> usize {
        (**self).size()
    }

    fn execute(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError> {
        (**self).execute(spec)
    }

    fn stats(&self) -> OracleStats {
        (**self).stats()
    }
}

/// The dilution-noise simulator with its own seeded outcome stream.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    instance: ProblemInstance,
    rng: SimRng,
    stats: OracleStats,
}

impl SimulatedOracle {
    pub fn new(instance: ProblemInstance) -> Self {
        let rng = seeded_rng(instance.rng_seed);
        Self { instance, rng, stats: OracleStats::default() }
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }
}

impl Oracle for SimulatedOracle {
    fn size(&self) -> usize {
        self.instance.n()
    }

    fn execute(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError> {
        let outcome = execute_test_simulated(&self.instance, spec, &mut self.rng)?;
        self.stats.record(outcome);
        Ok(outcome)
    }

    fn stats(&self) -> OracleStats {
        self.stats
    }
}

/// Wraps an oracle and appends every executed test to an [`ObservationLog`],
/// which doubles as the per-test trace of a search.
#[derive(Debug)]
pub struct RecordingOracle<O> {
    inner: O,
    log: ObservationLog,
}

impl<O: Oracle> RecordingOracle<O> {
    pub fn new(inner: O) -> Self {
        let log = ObservationLog::new(inner.size());
        Self { inner, log }
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_parts(self) -> (O, ObservationLog) {
        (self.inner, self.log)
    }
}

impl<O: Oracle> Oracle for RecordingOracle<O> {
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn execute(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError> {
        let outcome = self.inner.execute(spec)?;
        self.log.push(spec.clone(), outcome)?;
        Ok(outcome)
    }

    fn stats(&self) -> OracleStats {
        self.inner.stats()
    }
}
