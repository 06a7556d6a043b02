//! Drive a search over the NDJSON wire protocol against the in-process
//! loopback server.
//!
//!     cargo run --example external_oracle
//!     cargo run --example external_oracle -- serve 60
//!
//! With `serve`, the server stays up for the given number of seconds so
//! that `precond-miner probe --oracle tcp://ADDR --d-hat 3` can connect.

use std::time::Duration;

use precond_miner::oracle::wire::{ExternalSession, LoopbackServer};
use precond_miner::oracle::ProblemInstance;
use precond_miner::splitting::{find_necessary, SplitSearchConfig};

fn main() {
    let instance = ProblemInstance::random(64, 3, None, 5).unwrap();
    let truth = instance.truth.ids();
    let server = LoopbackServer::spawn(instance).expect("bind 127.0.0.1");

    let mut args = std::env::args().skip(1);
    if args.next().as_deref() == Some("serve") {
        let secs = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
        println!("serving tcp://{} for {secs}s, truth {truth:?}", server.addr());
        std::thread::sleep(Duration::from_secs(secs));
        return;
    }

    let mut session = ExternalSession::connect_tcp(server.addr(), Some(Duration::from_secs(5))).unwrap();
    let n = session.fetch_catalog().unwrap().len();
    let items: Vec<usize> = (0..n).collect();
    let found = find_necessary(&items, &SplitSearchConfig::new(3), &mut session).unwrap();
    let catalog = session.catalog().unwrap();
    for id in found.defective_ids() {
        println!("necessary: {id} ({})", catalog.label(id));
    }
    println!("{} tests over the wire, truth {truth:?}", found.tests_used);
}
