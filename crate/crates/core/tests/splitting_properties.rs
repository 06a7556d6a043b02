use proptest::prelude::*;

use precond_miner::model::NecessarySet;
use precond_miner::oracle::{Oracle, ProblemInstance, SimulatedOracle};
use precond_miner::splitting::{find_necessary, group_exponent, repeated_binary_splitting, SplitSearchConfig};

fn instance(n: usize, truth: &[usize]) -> ProblemInstance {
    ProblemInstance::noiseless(NecessarySet::from_ids(n, truth).unwrap(), 0)
}

/// Every truth set over up to 12 conditions, every d_hat up to n.
#[test]
fn exhaustive_exactness_small_universes() {
    for n in 1..=12usize {
        let items: Vec<usize> = (0..n).collect();
        for mask in 0u32..(1 << n) {
            let truth: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            for d_hat in 1..=n {
                let mut oracle = SimulatedOracle::new(instance(n, &truth));
                let found = find_necessary(&items, &SplitSearchConfig::new(d_hat), &mut oracle).unwrap();
                assert_eq!(found.defective_ids(), truth, "n={n} d_hat={d_hat}");
                assert_eq!(found.tests_used, oracle.stats().tests_issued);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn gbs_exact_on_random_orders(
        n in 1usize..300,
        seed in any::<u64>(),
        d_frac in 0.0f64..0.1,
        d_hat in 1usize..20,
        rerun in prop::option::of(1usize..6),
    ) {
        let d = ((n as f64 * d_frac) as usize).min(n);
        let inst = ProblemInstance::random(n, d, None, seed).unwrap();
        let truth = inst.truth.ids();
        // The search must not depend on the item order.
        let mut items: Vec<usize> = (0..n).collect();
        items.rotate_left(seed as usize % n);
        let cfg = SplitSearchConfig { d_hat, rerun_budget: rerun };
        let found = find_necessary(&items, &cfg, &mut SimulatedOracle::new(inst)).unwrap();
        prop_assert_eq!(found.defective_ids(), truth);
        prop_assert!(found.undecided.is_empty());
        prop_assert_eq!(found.residual_positive, d > d_hat);
    }

    #[test]
    fn baseline_finds_known_count(n in 1usize..400, d in 0usize..8, seed in any::<u64>()) {
        let d = d.min(n);
        let inst = ProblemInstance::random(n, d, None, seed).unwrap();
        let items: Vec<usize> = (0..n).collect();
        let found = repeated_binary_splitting(&items, d, &mut SimulatedOracle::new(inst.clone())).unwrap();
        prop_assert_eq!(found.defective_ids(), inst.truth.ids());
        // Each pass costs at most ceil(log2(n)) + 1 tests.
        let per_pass = (n as f64).log2().ceil() as usize + 1;
        prop_assert!(found.tests_used <= d * per_pass);
    }

    /// When the budget is right, tests stay within the classic bound
    /// d * (alpha + 2) + n / 2^alpha.
    #[test]
    fn gbs_budget_when_d_known(n in 2usize..700, d in 1usize..8, seed in any::<u64>()) {
        let d = d.min(n);
        let inst = ProblemInstance::random(n, d, None, seed).unwrap();
        let items: Vec<usize> = (0..n).collect();
        let found = find_necessary(&items, &SplitSearchConfig::new(d), &mut SimulatedOracle::new(inst)).unwrap();
        let alpha = group_exponent(n, d) as usize;
        let bound = d * (alpha + 2) + n / (1 << alpha);
        prop_assert!(found.tests_used <= bound, "{} > {}", found.tests_used, bound);
    }
}
