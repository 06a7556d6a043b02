//! Adaptive Barinel under dilution noise: recall and precision of the
//! suspect set as tests accumulate.
//!
//!     cargo run --release --example adaptive_search -- [mu] [seed]

use precond_miner::adaptive::{run_adaptive_barinel, AdaptiveConfig};
use precond_miner::oracle::{ProblemInstance, SimulatedOracle};

fn main() {
    let mut args = std::env::args().skip(1);
    let mu: f64 = args.next().map_or(0.1, |s| s.parse().expect("mu"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let (n, d) = (642, 5);

    let instance = ProblemInstance::random(n, d, Some((mu, 0.05)), seed).unwrap();
    let truth = instance.truth.clone();
    let mut oracle = SimulatedOracle::new(instance);
    let cfg = AdaptiveConfig { d_hat: d, rng_seed: seed, ..Default::default() };
    let universe: Vec<usize> = (0..n).collect();
    let run = run_adaptive_barinel(&universe, &cfg, &mut oracle, Some(&truth)).unwrap();

    println!("tests  epsilon  mode     recall  precision");
    for t in run.trace.iter().step_by(10) {
        println!(
            "{:5}  {:.3}    {:7}  {:.2}    {:.2}",
            t.tests_used,
            t.epsilon,
            t.mode,
            t.recall.unwrap(),
            t.precision.unwrap()
        );
    }
    println!("truth     {:?}", truth.ids());
    println!("suspects  {:?}", run.posterior.top_sorted());
    println!(
        "converged={} after {} tests, {} decodes; full recall first at {:?} tests",
        run.converged,
        run.tests_used(),
        run.decodes,
        run.first_full_recall()
    );
}
