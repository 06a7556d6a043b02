//! Generalized binary splitting against a noiseless simulated exploit,
//! next to the repeated binary splitting baseline.
//!
//!     cargo run --example noiseless_search -- [n] [d] [d_hat] [seed]

use precond_miner::oracle::{Oracle, ProblemInstance, RecordingOracle, SimulatedOracle};
use precond_miner::splitting::{find_necessary, group_exponent, repeated_binary_splitting, SplitSearchConfig};

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let (n, d, d_hat, seed) = (arg(1, 642) as usize, arg(2, 5) as usize, arg(3, 5) as usize, arg(4, 1));
    let instance = ProblemInstance::random(n, d, None, seed).expect("d <= n");
    println!("hidden necessary set: {:?}", instance.truth.ids());

    let items: Vec<usize> = (0..n).collect();
    let mut oracle = RecordingOracle::new(SimulatedOracle::new(instance.clone()));
    let gbs = find_necessary(&items, &SplitSearchConfig::new(d_hat), &mut oracle).expect("simulated oracle");
    println!(
        "gbs      d_hat={d_hat} group=2^{} found={:?} tests={} residual_rerun={}",
        group_exponent(n, d_hat),
        gbs.defective_ids(),
        gbs.tests_used,
        gbs.residual_positive
    );
    for r in oracle.log().records().iter().take(4) {
        println!("  #{} disable {} conditions -> {}", r.sequence_number, r.spec.disabled_count(), r.outcome);
    }

    let mut oracle = SimulatedOracle::new(instance);
    let base = repeated_binary_splitting(&items, d, &mut oracle).expect("simulated oracle");
    println!("baseline d={d} found={:?} tests={}", base.defective_ids(), oracle.stats().tests_issued);
}
