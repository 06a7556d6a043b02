//! A reproducible benchmark built in code rather than from a config file.
//! Writes the CSV report to the given directory.
//!
//!     cargo run --release --example benchmark_sweep -- [outdir]

use precond_miner::harness::{emit_report, run_experiment, summarize, ExperimentConfig};

const CONFIG: &str = "
mode = noiseless
n = 642
d_true = 5
d_hat = 1, 3, 5, 10, 50
reps = 30
seed = 2024
";

fn main() {
    let outdir = std::env::args().nth(1).unwrap_or_else(|| "target/benchmark_sweep".into());
    let cfg = ExperimentConfig::parse(CONFIG).unwrap();
    let out = run_experiment(&cfg).unwrap();
    println!("algorithm         d_hat  mean tests  exact");
    for c in summarize(&out.rows) {
        println!("{:17} {:5}  {:10.2}  {}", c.algorithm, c.d_hat, c.tests_used.0, c.exact_rate.unwrap());
    }
    for path in emit_report(&out, &cfg, &outdir).unwrap() {
        println!("wrote {}", path.display());
    }
}
