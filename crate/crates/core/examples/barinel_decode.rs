//! Offline diagnosis of a small hand-written observation log: candidate
//! generation, goodness fitting and the ranked report.
//!
//!     cargo run --example barinel_decode

use precond_miner::barinel::{diagnose, fit_goodness, staccato_candidates, BarinelConfig, MleConfig};
use precond_miner::model::ObservationLog;

// Conditions 1 and 3 are necessary; one test that disabled 3 slipped
// through because of noise.
const LOG: &str = "#precond-log v1
n=6
0,blocked,0;1;2
1,exploited,0;2;4
2,blocked,1
3,blocked,3;4
4,exploited,3;5
5,blocked,2;3
6,exploited,0;5
7,blocked,1;5
";

fn main() {
    let log = ObservationLog::parse(LOG).expect("well-formed log");
    let candidates = staccato_candidates(&log, None).expect("consistent log");
    println!("minimal hitting sets: {candidates:?}");

    let (goodness, ll) = fit_goodness(&log, &[1, 3], &MleConfig::default()).unwrap();
    println!("goodness for {{1, 3}}: {goodness:?} (log-likelihood {ll:.4})");

    let report = diagnose(&log, &BarinelConfig::default()).unwrap();
    report.write_csv(std::io::stdout().lock()).unwrap();
}
