use std::error::Error;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use precond_miner::adaptive::{run_adaptive_barinel, AdaptiveConfig};
use precond_miner::barinel::{diagnose, BarinelConfig};
use precond_miner::harness::{emit_report, run_experiment, ExperimentConfig, Mode, OracleTarget};
use precond_miner::model::{ConditionId, ObservationLog};
use precond_miner::oracle::wire::ExternalSession;
use precond_miner::oracle::RecordingOracle;
use precond_miner::splitting::{find_necessary, SplitSearchConfig};

#[derive(Parser)]
#[command(name = "precond-miner", version, about = "Find the environment conditions an exploit depends on")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a noiseless splitting benchmark described by a config file.
    Noiseless {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a noisy adaptive benchmark described by a config file.
    Noisy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Search a live external oracle.
    Probe {
        /// Address as tcp://host:port.
        #[arg(long)]
        oracle: String,
        #[arg(long = "d-hat")]
        d_hat: usize,
        #[arg(long, value_enum, default_value_t = Algorithm::Adaptive)]
        algorithm: Algorithm,
        /// Per-test timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Save every executed test for later `decode`.
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
    /// Rank diagnoses for a saved observation log and print them as CSV.
    Decode {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        prior: Option<f64>,
        /// Candidate cap; 0 enumerates every minimal hitting set.
        #[arg(long)]
        cap: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    /// Generalized binary splitting; assumes a noiseless oracle.
    Gbs,
    /// Adaptive Barinel; tolerates dilution noise.
    Adaptive,
}

fn bench(config: PathBuf, output: Option<PathBuf>, mode: Mode) -> Result<(), Box<dyn Error>> {
    let cfg = ExperimentConfig::read_file(&config)?;
    if cfg.mode != mode {
        return Err(format!("{} sets mode = {}, expected {mode}", config.display(), cfg.mode).into());
    }
    let outdir = output.unwrap_or_else(|| cfg.output.clone());
    let out = run_experiment(&cfg)?;
    for path in emit_report(&out, &cfg, &outdir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn probe(
    oracle: String,
    d_hat: usize,
    algorithm: Algorithm,
    timeout: Option<f64>,
    seed: u64,
    max_iters: Option<usize>,
    log_out: Option<PathBuf>,
) -> Result<(), Box<dyn Error>> {
    let OracleTarget::External(addr) = oracle.parse::<OracleTarget>()? else {
        return Err("probe needs an external oracle address".into());
    };
    let timeout = timeout.map(Duration::try_from_secs_f64).transpose()?;
    let mut session = ExternalSession::connect_tcp(addr.as_str(), timeout)?;
    let catalog = session.fetch_catalog()?.clone();
    let universe: Vec<ConditionId> = (0..catalog.len()).collect();
    let mut recorder = RecordingOracle::new(session);

    let found = match algorithm {
        Algorithm::Gbs => find_necessary(&universe, &SplitSearchConfig::new(d_hat), &mut recorder)?.defective_ids(),
        Algorithm::Adaptive => {
            let defaults = AdaptiveConfig::default();
            let cfg = AdaptiveConfig { d_hat, rng_seed: seed, max_iters: max_iters.unwrap_or(defaults.max_iters), ..defaults };
            let run = run_adaptive_barinel(&universe, &cfg, &mut recorder, None)?;
            if !run.converged {
                eprintln!("iteration budget exhausted before convergence");
            }
            run.posterior.top_sorted()
        }
    };
    let (_, log) = recorder.into_parts();
    println!("tests_used = {}", log.len());
    for id in found {
        println!("{id}\t{}", catalog.label(id));
    }
    if let Some(path) = log_out {
        log.write_file(path)?;
    }
    Ok(())
}

fn decode(log: PathBuf, prior: Option<f64>, cap: Option<usize>) -> Result<(), Box<dyn Error>> {
    let log = ObservationLog::read_file(log)?;
    let mut cfg = BarinelConfig::default();
    if let Some(p) = prior {
        cfg.prior = p;
    }
    if let Some(c) = cap {
        cfg.candidate_cap = (c > 0).then_some(c);
    }
    diagnose(&log, &cfg)?.write_csv(io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Noiseless { config, output } => bench(config, output, Mode::Noiseless),
        Command::Noisy { config, output } => bench(config, output, Mode::Noisy),
        Command::Probe { oracle, d_hat, algorithm, timeout, seed, max_iters, log_out } => {
            probe(oracle, d_hat, algorithm, timeout, seed, max_iters, log_out)
        }
        Command::Decode { log, prior, cap } => decode(log, prior, cap),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
