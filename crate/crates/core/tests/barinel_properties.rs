use proptest::prelude::*;

use precond_miner::barinel::{
    diagnose, exhaustive_minimal_hitting_sets, fit_model, rank_diagnoses, staccato_candidates, BarinelConfig,
    LikelihoodModel, MleConfig,
};
use precond_miner::model::{ObservationLog, TestOutcome, TestSpec};

fn log_strategy(max_m: usize, max_tests: usize) -> impl Strategy<Value = ObservationLog> {
    (1..=max_m).prop_flat_map(move |m| {
        prop::collection::vec((prop::collection::vec(prop::bool::weighted(0.35), m), any::<bool>()), 1..=max_tests)
            .prop_map(move |recs| {
                let mut log = ObservationLog::new(m);
                for (mut flags, blocked) in recs {
                    if blocked && !flags.contains(&true) {
                        flags[0] = true;
                    }
                    let outcome = if blocked { TestOutcome::Blocked } else { TestOutcome::Exploited };
                    log.push(TestSpec::from_flags(flags), outcome).unwrap();
                }
                log
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn staccato_matches_brute_force(log in log_strategy(12, 20)) {
        prop_assert_eq!(staccato_candidates(&log, None).unwrap(), exhaustive_minimal_hitting_sets(&log).unwrap());
    }

    /// A capped search returns a subset of the true minimal hitting sets.
    #[test]
    fn capped_candidates_are_minimal(log in log_strategy(12, 20), cap in 1usize..6) {
        let all = exhaustive_minimal_hitting_sets(&log).unwrap();
        let some = staccato_candidates(&log, Some(cap)).unwrap();
        prop_assert!(!all.is_empty() == !some.is_empty() || log.blocked_count() == 0);
        for c in &some {
            prop_assert!(all.contains(c), "{:?} not minimal", c);
        }
    }

    #[test]
    fn fitting_never_decreases_likelihood(log in log_strategy(8, 20)) {
        let cands = staccato_candidates(&log, None).unwrap();
        prop_assume!(!cands.is_empty());
        let model = LikelihoodModel::new(&log, &cands[0]).unwrap();
        let cfg = MleConfig::default();
        let start = model.log_likelihood(&vec![cfg.g_init; cands[0].len()]);
        let (g, ll, history) = fit_model(&model, &cfg).unwrap();
        prop_assert!(ll >= start - 1e-12);
        prop_assert!(history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn posteriors_sum_to_one(log in log_strategy(10, 20)) {
        let report = diagnose(&log, &BarinelConfig::default()).unwrap();
        if log.blocked_count() == 0 {
            prop_assert!(report.diagnoses.is_empty());
        } else {
            let total: f64 = report.diagnoses.iter().map(|d| d.posterior).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(report.diagnoses.windows(2).all(|w| w[0].posterior >= w[1].posterior));
        }
    }
}

#[test]
fn ranking_is_independent_of_candidate_order() {
    let text = "#precond-log v1\nn=5\n0,blocked,0;1\n1,blocked,1;2\n2,exploited,0;3\n3,blocked,2;4\n4,exploited,1\n";
    let log = ObservationLog::parse(text).unwrap();
    let cands = staccato_candidates(&log, None).unwrap();
    let mut reversed = cands.clone();
    reversed.reverse();
    let mle = MleConfig::default();
    let a = rank_diagnoses(&cands, &log, 0.01, &mle).unwrap();
    let b = rank_diagnoses(&reversed, &log, 0.01, &mle).unwrap();
    assert_eq!(a, b);
}
