//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;

use precond_miner::barinel::{
    exhaustive_minimal_hitting_sets, fit_goodness, staccato_candidates, LikelihoodModel, MleConfig,
};
use precond_miner::harness::{
    run_noiseless_benchmark, run_noisy_benchmark, summarize, ExperimentConfig, ALGO_BINARY_SPLITTING, ALGO_GBS,
};
use precond_miner::model::{ObservationLog, TestOutcome, TestSpec};
use precond_miner::oracle::wire::{ExternalSession, Frame, LoopbackServer, ProtocolError};
use precond_miner::oracle::{
    block_probability, derive_seed, execute_test_simulated, seeded_rng, OracleError, ProblemInstance, SimRng,
    SimulatedOracle,
};
use precond_miner::splitting::{find_necessary, SplitSearchConfig};

const SEED: u64 = 20_261_016;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// (n, d, d_hat, instance seed) for the noiseless exactness sweep: every
/// (n, d, d_hat) combination once, then random draws up to 500.
fn noiseless_cases() -> Vec<(usize, usize, usize, u64)> {
    let mut cases = Vec::new();
    for n in [16, 64, 642] {
        for d in 0..=8 {
            for d_hat in 1..=2 * d + 2 {
                cases.push((n, d, d_hat));
            }
        }
    }
    let mut rng = seeded_rng(derive_seed(SEED, &[1]));
    while cases.len() < 500 {
        let n = [16, 64, 642][rng.random_range(0..3)];
        let d = rng.random_range(0..=8);
        cases.push((n, d, rng.random_range(1..=2 * d + 2)));
    }
    cases.into_iter().enumerate().map(|(i, (n, d, h))| (n, d, h, derive_seed(SEED, &[1, i as u64]))).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = noiseless_cases();
    let mut failures = Vec::new();
    for &(n, d, d_hat, seed) in &cases {
        let instance = ProblemInstance::random(n, d, None, seed).unwrap();
        let truth = instance.truth.ids();
        let items: Vec<usize> = (0..n).collect();
        let found = find_necessary(&items, &SplitSearchConfig::new(d_hat), &mut SimulatedOracle::new(instance))
            .map(|r| r.defective_ids())
            .ok();
        if found.as_ref() != Some(&truth) {
            failures.push((n, d, d_hat, seed));
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{}/{} instances recovered exactly in {:.2}s; failures {:?}",
            cases.len() - failures.len(),
            cases.len(),
            elapsed.as_secs_f64(),
            &failures[..failures.len().min(5)]
        ),
    )
}

fn fig4_config() -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "mode = noiseless\nn = 642\nd_true = 5\nd_hat = 5, 50, 100\nreps = 50\nseed = {SEED}"
    ))
    .unwrap()
}

fn mean_tests(cells: &[precond_miner::harness::SummaryCell], algorithm: &str, d_hat: usize) -> f64 {
    cells.iter().find(|c| c.algorithm == algorithm && c.d_hat == d_hat).unwrap().tests_used.0
}

fn criterion_2() -> Outcome {
    let cells = summarize(&run_noiseless_benchmark(&fig4_config()).map_err(|e| e.to_string())?);
    let bs = mean_tests(&cells, ALGO_BINARY_SPLITTING, 5);
    let at = |d_hat| mean_tests(&cells, ALGO_GBS, d_hat);
    check(
        at(5) < bs && at(50) > bs && at(100) > bs,
        format!(
            "50 reps: binary splitting x5 {bs:.2}; GBS d_hat=5 {:.2}, d_hat=50 {:.2}, d_hat=100 {:.2}",
            at(5),
            at(50),
            at(100)
        ),
    )
}

fn criterion_3() -> Outcome {
    let cells = summarize(&run_noiseless_benchmark(&fig4_config()).map_err(|e| e.to_string())?);
    let mean = mean_tests(&cells, ALGO_GBS, 5);
    let bound = 2.0 * 5.0 * (642.0f64 / 5.0).log2();
    check(mean <= bound, format!("mean GBS tests {mean:.2} <= {bound:.2}"))
}

fn random_log(rng: &mut SimRng, max_components: usize, max_tests: usize) -> ObservationLog {
    let m = rng.random_range(1..=max_components);
    let tests = rng.random_range(1..=max_tests);
    let density = rng.random_range(0.15..0.6);
    let mut log = ObservationLog::new(m);
    for _ in 0..tests {
        let mut flags: Vec<bool> = (0..m).map(|_| rng.random_bool(density)).collect();
        let blocked = rng.random_bool(0.5);
        if blocked && !flags.contains(&true) {
            flags[rng.random_range(0..m)] = true;
        }
        let outcome = if blocked { TestOutcome::Blocked } else { TestOutcome::Exploited };
        log.push(TestSpec::from_flags(flags), outcome).unwrap();
    }
    log
}

fn criterion_4() -> Outcome {
    let mut rng = seeded_rng(derive_seed(SEED, &[4]));
    let mut mismatches = 0;
    let mut total_sets = 0;
    for _ in 0..1000 {
        let log = random_log(&mut rng, 12, 20);
        let fast = staccato_candidates(&log, None).unwrap();
        let slow = exhaustive_minimal_hitting_sets(&log).unwrap();
        total_sets += slow.len();
        mismatches += usize::from(fast != slow);
    }
    check(mismatches == 0, format!("1000 logs, {total_sets} minimal hitting sets, {mismatches} mismatches"))
}

fn criterion_5() -> Outcome {
    let mut rng = seeded_rng(derive_seed(SEED, &[5]));
    let mut worst: f64 = 0.0;
    let mut points = 0;
    while points < 100 {
        let log = random_log(&mut rng, 10, 20);
        let Some(cand) = staccato_candidates(&log, None).unwrap().into_iter().next() else { continue };
        let model = LikelihoodModel::new(&log, &cand).unwrap();
        let g: Vec<f64> = cand.iter().map(|_| rng.random_range(0.1..0.9)).collect();
        let analytic = model.gradient(&g);
        let h = 1e-4;
        for i in 0..g.len() {
            let at = |delta: f64| {
                let mut x = g.clone();
                x[i] += delta;
                model.log_likelihood(&x)
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let scale = analytic[i].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((analytic[i] - fd).abs() / scale);
        }
        points += 1;
    }

    let mut worst_bernoulli: f64 = 0.0;
    for (k, m) in [(1, 1), (3, 1), (1, 4), (7, 3), (2, 9), (12, 5), (40, 1)] {
        let mut log = ObservationLog::new(1);
        let spec = TestSpec::from_ids(1, &[0]).unwrap();
        for _ in 0..k {
            log.push(spec.clone(), TestOutcome::Exploited).unwrap();
        }
        for _ in 0..m {
            log.push(spec.clone(), TestOutcome::Blocked).unwrap();
        }
        let (g, _) = fit_goodness(&log, &[0], &MleConfig::default()).map_err(|e| e.to_string())?;
        worst_bernoulli = worst_bernoulli.max((g[&0] - k as f64 / (k + m) as f64).abs());
    }
    check(
        worst <= 1e-5 && worst_bernoulli <= 1e-3,
        format!("gradient worst relative error {worst:.2e} over 100 points; Bernoulli worst |g - k/(k+m)| {worst_bernoulli:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = seeded_rng(derive_seed(SEED, &[6]));
    let trials = 100_000;
    let mut worst_z: f64 = 0.0;
    let mut failures = 0;
    for pair in 0..50u64 {
        let n = rng.random_range(8..=64);
        let d = rng.random_range(1..=6);
        let mu = rng.random_range(0.0..0.5);
        let sigma = rng.random_range(0.0..0.2);
        let instance = ProblemInstance::random(n, d, Some((mu, sigma)), derive_seed(SEED, &[6, pair])).unwrap();
        // Half the pairs disable a random slice of the truth plus noise
        // conditions; the rest are arbitrary random subsets.
        let k = rng.random_range(1..=n / 2);
        let mut ids: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
        if pair % 2 == 0 {
            let truth = instance.truth.ids();
            ids.extend(&truth[..rng.random_range(1..=truth.len())]);
            ids.sort_unstable();
            ids.dedup();
        }
        let spec = TestSpec::from_ids(n, &ids).unwrap();
        let p = block_probability(&instance, &spec).unwrap();
        let mut outcomes = seeded_rng(derive_seed(SEED, &[6, pair, 1]));
        let hits = (0..trials)
            .filter(|_| execute_test_simulated(&instance, &spec, &mut outcomes).unwrap().is_blocked())
            .count();
        let freq = hits as f64 / trials as f64;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        if sd == 0.0 {
            failures += usize::from(freq != p);
            continue;
        }
        let z = (freq - p).abs() / sd;
        worst_z = worst_z.max(z);
        failures += usize::from(z > 3.0);
    }
    check(failures == 0, format!("50 pairs x 1e5 trials, worst deviation {worst_z:.2} sigma, {failures} beyond 3 sigma"))
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig::parse(&format!(
        "mode = noisy\nn = 642\nd_true = 5\nnoise = 0.05:0.05, 0.1:0.05, 0.15:0.05, 0.2:0.05\nreps = 11\nseed = {SEED}"
    ))
    .unwrap();
    let start = Instant::now();
    let out = run_noisy_benchmark(&cfg).map_err(|e| e.to_string())?;
    let cells = summarize(&out.rows);
    let medians: Vec<f64> = cells.iter().map(|c| c.first_full_recall_median.unwrap()).collect();
    let monotone = medians.windows(2).all(|w| w[0] <= w[1]);
    let precise = out.rows.iter().all(|r| r.precision == Some(1.0));
    let min_precision = out.rows.iter().filter_map(|r| r.precision).fold(1.0, f64::min);
    check(
        medians[0] <= 300.0 && medians[3] <= 900.0 && monotone && precise,
        format!(
            "11 seeds per mu; median tests to full recall {medians:?} for mu 0.05..0.2; min final precision {min_precision}; {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn run_cli(config: &Path, subcommand: &str, outdir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_precond-miner"))
        .args([subcommand, "--config"])
        .arg(config)
        .arg("--output")
        .arg(outdir)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn criterion_8() -> Outcome {
    let root = std::env::temp_dir().join(format!("precond-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    let configs = [
        ("noiseless", format!("mode = noiseless\nn = 642\nd_true = 5\nd_hat = 1, 5, 50\nreps = 10\nseed = {SEED}\n")),
        ("noisy", format!("mode = noisy\nn = 642\nd_true = 5\nnoise = 0.05:0.05, 0.2:0.05\nreps = 3\nseed = {SEED}\n")),
    ];
    let mut compared = Vec::new();
    for (mode, text) in &configs {
        let config = root.join(format!("{mode}.conf"));
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        let (a, b) = (root.join(format!("{mode}-a")), root.join(format!("{mode}-b")));
        run_cli(&config, mode, &a)?;
        run_cli(&config, mode, &b)?;
        let mut names: Vec<String> = std::fs::read_dir(&a)
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|name| name != "timings.csv")
            .collect();
        names.sort();
        for name in names {
            let same = std::fs::read(a.join(&name)).ok() == std::fs::read(b.join(&name)).ok();
            if !same {
                return Err(format!("{mode}/{name} differs between reruns"));
            }
            compared.push(format!("{mode}/{name}"));
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    check(compared.len() >= 7, format!("byte-identical across CLI reruns: {}", compared.join(", ")))
}

/// A one-shot TCP server that answers the handshake and then replies to
/// the first test with `reply` verbatim.
fn rogue_server(reply: &'static str) -> std::net::SocketAddr {
    let listener = TcpListener::bind(("127.0.0.1", 0)).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let catalog = ProblemInstance::random(4, 1, None, 0).unwrap().catalog;
        writer.write_all(Frame::Catalog { conditions: catalog.iter().cloned().collect() }.encode().as_bytes()).unwrap();
        line.clear();
        reader.read_line(&mut line).unwrap();
        writer.write_all(reply.as_bytes()).unwrap();
    });
    addr
}

fn criterion_9() -> Outcome {
    let cases: Vec<_> = noiseless_cases().into_iter().filter(|c| c.0 == 64).collect();
    let mut failures = 0;
    for &(n, d, d_hat, seed) in &cases {
        let instance = ProblemInstance::random(n, d, None, seed).unwrap();
        let truth = instance.truth.ids();
        let server = LoopbackServer::spawn(instance).map_err(|e| e.to_string())?;
        let mut session =
            ExternalSession::connect_tcp(server.addr(), Some(Duration::from_secs(10))).map_err(|e| e.to_string())?;
        let items: Vec<usize> = (0..session.fetch_catalog().map_err(|e| e.to_string())?.len()).collect();
        let found =
            find_necessary(&items, &SplitSearchConfig::new(d_hat), &mut session).map(|r| r.defective_ids()).ok();
        failures += usize::from(found.as_ref() != Some(&truth));
    }

    let reject = |reply: &'static str| {
        let mut session = ExternalSession::connect_tcp(rogue_server(reply), Some(Duration::from_secs(10))).unwrap();
        session.fetch_catalog().unwrap();
        session.execute_test_external(&TestSpec::from_ids(4, &[1]).unwrap())
    };
    let bad_id = matches!(
        reject("{\"type\":\"result\",\"id\":7,\"exploited\":true}\n"),
        Err(OracleError::Protocol(ProtocolError::IdMismatch { expected: 0, found: 7 }))
    );
    let unknown = matches!(
        reject("{\"type\":\"verdict\",\"id\":0}\n"),
        Err(OracleError::Protocol(ProtocolError::UnknownType(t))) if t == "verdict"
    );
    let truncated =
        matches!(reject("{\"type\":\"result\",\"id\":0,\"expl"), Err(OracleError::Protocol(ProtocolError::Truncated)));
    check(
        failures == 0 && bad_id && unknown && truncated,
        format!(
            "{}/{} n=64 instances exact over loopback TCP; rejects bad id: {bad_id}, unknown type: {unknown}, truncated line: {truncated}",
            cases.len() - failures,
            cases.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("noiseless exactness", criterion_1),
        ("splitting vs baseline ordering", criterion_2),
        ("splitting efficiency", criterion_3),
        ("hitting-set equivalence", criterion_4),
        ("likelihood fitting", criterion_5),
        ("noise-model fidelity", criterion_6),
        ("noisy recall envelope", criterion_7),
        ("determinism", criterion_8),
        ("protocol conformance", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => ("PASS", detail),
            Ok(Err(detail)) => ("FAIL", detail),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        failed += usize::from(tag == "FAIL");
        println!("{tag} criterion {}: {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
