use std::io::{BufReader, Cursor};
use std::time::Duration;

use precond_miner::adaptive::{run_adaptive_barinel, AdaptiveConfig};
use precond_miner::model::{ConditionCatalog, TestSpec};
use precond_miner::oracle::wire::{serve, ExternalSession, Frame, LoopbackServer, ProtocolError};
use precond_miner::oracle::{OracleError, ProblemInstance, SimulatedOracle};

/// A session whose server side replies with the given script.
fn scripted(reply: &str) -> ExternalSession<BufReader<Cursor<Vec<u8>>>, Vec<u8>> {
    ExternalSession::new(BufReader::new(Cursor::new(reply.as_bytes().to_vec())), Vec::new())
}

fn catalog_line(n: usize) -> String {
    Frame::Catalog { conditions: ConditionCatalog::synthetic(n).iter().cloned().collect() }.encode()
}

#[test]
fn noisy_search_over_loopback_matches_in_process() {
    let instance = ProblemInstance::random(128, 3, Some((0.1, 0.05)), 4).unwrap();
    let truth = instance.truth.clone();
    let cfg = AdaptiveConfig { d_hat: 3, rng_seed: 9, ..Default::default() };
    let universe: Vec<usize> = (0..128).collect();

    let local = run_adaptive_barinel(&universe, &cfg, &mut SimulatedOracle::new(instance.clone()), Some(&truth)).unwrap();

    let server = LoopbackServer::spawn(instance).unwrap();
    let mut session = ExternalSession::connect_tcp(server.addr(), Some(Duration::from_secs(10))).unwrap();
    session.fetch_catalog().unwrap();
    let remote = run_adaptive_barinel(&universe, &cfg, &mut session, Some(&truth)).unwrap();

    assert_eq!(remote.log, local.log);
    assert_eq!(remote.posterior.top_sorted(), truth.ids());
}

#[test]
fn client_error_classes() {
    let spec = TestSpec::from_ids(3, &[0]).unwrap();
    let run = |script: String| {
        let mut s = scripted(&script);
        s.fetch_catalog().unwrap();
        s.execute_test_external(&spec)
    };
    let cat = catalog_line(3);
    assert!(matches!(
        run(format!("{cat}{{\"type\":\"result\",\"id\":5,\"exploited\":false}}\n")),
        Err(OracleError::Protocol(ProtocolError::IdMismatch { expected: 0, found: 5 }))
    ));
    assert!(matches!(
        run(format!("{cat}{{\"type\":\"bogus\"}}\n")),
        Err(OracleError::Protocol(ProtocolError::UnknownType(_)))
    ));
    assert!(matches!(
        run(format!("{cat}{{\"type\":\"result\",\"id\":0")),
        Err(OracleError::Protocol(ProtocolError::Truncated))
    ));
    assert!(matches!(run(format!("{cat}not json\n")), Err(OracleError::Protocol(ProtocolError::Malformed(_)))));
    // A clean close mid-session is a transport failure, which may be retried.
    let err = run(cat.clone()).unwrap_err();
    assert!(matches!(err, OracleError::Transport(_)) && err.is_retriable());
    assert!(matches!(
        run(format!("{cat}{{\"type\":\"error\",\"message\":\"victim crashed\"}}\n")),
        Err(OracleError::Protocol(ProtocolError::Remote(m))) if m == "victim crashed"
    ));
}

#[test]
fn results_before_handshake_are_rejected() {
    let mut s = scripted("");
    let err = s.execute_test_external(&TestSpec::from_ids(3, &[0]).unwrap()).unwrap_err();
    assert!(matches!(err, OracleError::Protocol(ProtocolError::NoHandshake)));
}

#[test]
fn server_rejects_non_increasing_ids() {
    let instance = ProblemInstance::random(4, 1, None, 0).unwrap();
    let requests = [
        Frame::Hello { version: 1 }.encode(),
        Frame::Test { id: 3, disable: vec![0] }.encode(),
        Frame::Test { id: 3, disable: vec![1] }.encode(),
    ]
    .concat();
    let mut out = Vec::new();
    let err = serve(
        Cursor::new(requests.into_bytes()),
        &mut out,
        &instance.catalog,
        &mut SimulatedOracle::new(instance.clone()),
    )
    .unwrap_err();
    assert!(matches!(err, OracleError::Protocol(ProtocolError::NonIncreasingId { previous: 3, found: 3 })));
    let last = String::from_utf8(out).unwrap().lines().last().unwrap().to_string();
    assert!(matches!(Frame::decode(&last).unwrap(), Frame::Error { .. }));
}
