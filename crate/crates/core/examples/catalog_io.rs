//! Condition catalogs and observation logs on disk, plus instance checks.
//!
//!     cargo run --example catalog_io

use precond_miner::model::{
    validate_instance, ConditionCatalog, ConditionDescriptor, ConditionGroup, NecessarySet, ObservationLog,
    TestOutcome, TestSpec,
};

fn main() {
    let labels = [
        (ConditionGroup::AccessControl, "remove write permission on /var/www"),
        (ConditionGroup::Connectivity, "block outbound port 4444"),
        (ConditionGroup::Services, "stop the ftp daemon"),
        (ConditionGroup::Safeguards, "enable ASLR"),
        (ConditionGroup::Packages, "uninstall python3, gcc"),
    ];
    let catalog = ConditionCatalog::new(
        labels
            .iter()
            .enumerate()
            .map(|(id, &(group, label))| ConditionDescriptor { id, group, label: label.into() })
            .collect(),
    )
    .unwrap();
    let text = catalog.to_text();
    print!("{text}");
    assert_eq!(ConditionCatalog::parse(&text).unwrap(), catalog);

    let truth = NecessarySet::from_ids(5, &[1, 2]).unwrap();
    println!("instance valid: {}", validate_instance(&catalog, &truth).is_ok());
    let short = NecessarySet::from_ids(4, &[1]).unwrap();
    for v in validate_instance(&catalog, &short).violations {
        println!("violation: {v}");
    }

    let mut log = ObservationLog::new(5);
    log.push(TestSpec::from_ids(5, &[0, 1]).unwrap(), TestOutcome::Blocked).unwrap();
    log.push(TestSpec::from_ids(5, &[3, 4]).unwrap(), TestOutcome::Exploited).unwrap();
    let path = std::env::temp_dir().join("precond-example.log");
    log.write_file(&path).unwrap();
    print!("{}", std::fs::read_to_string(&path).unwrap());
    assert_eq!(ObservationLog::read_file(&path).unwrap(), log);
}
