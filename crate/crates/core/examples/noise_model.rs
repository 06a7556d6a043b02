//! The dilution noise model: disabling a necessary condition only blocks
//! the exploit with probability 1 - epsilon, while disabling nothing
//! necessary never does.
//!
//!     cargo run --example noise_model -- [mu] [sigma]

use precond_miner::model::TestSpec;
use precond_miner::oracle::{block_probability, execute_test_simulated, seeded_rng, ProblemInstance};

fn main() {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().expect("numeric argument"));
    let mu = args.next().unwrap_or(0.2);
    let sigma = args.next().unwrap_or(0.05);
    let instance = ProblemInstance::random(64, 4, Some((mu, sigma)), 3).expect("valid noise");
    let truth = instance.truth.ids();
    for &c in &truth {
        println!("condition {c:2}: epsilon = {:.4}", instance.noise.epsilon(c));
    }

    let spare = (0..64).find(|c| !truth.contains(c)).unwrap();
    let specs = [
        ("one necessary", TestSpec::from_ids(64, &truth[..1]).unwrap()),
        ("two necessary", TestSpec::from_ids(64, &truth[..2]).unwrap()),
        ("all necessary", TestSpec::from_ids(64, &truth).unwrap()),
        ("none necessary", TestSpec::from_ids(64, &[spare]).unwrap()),
    ];
    let mut rng = seeded_rng(9);
    let trials = 100_000;
    for (name, spec) in &specs {
        let p = block_probability(&instance, spec).unwrap();
        let hits = (0..trials)
            .filter(|_| execute_test_simulated(&instance, spec, &mut rng).unwrap().is_blocked())
            .count();
        println!("{name:15} P(blocked) = {p:.5}  observed {:.5}", hits as f64 / trials as f64);
    }
}
