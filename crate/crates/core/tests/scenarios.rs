use std::path::PathBuf;

use proctor_core::sim::{run_scenario, Scenario};

fn load(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_scenarios_pass_their_assertions() {
    for name in [
        "honest.toml",
        "spam_heavy.toml",
        "inverted_reviewers.toml",
        "contamination.toml",
        "collusion.toml",
        "cohort.toml",
    ] {
        let report = run_scenario(&load(name), 1).unwrap();
        for a in &report.assertions {
            println!("{name}: {} {:?} {} -> {:?}", a.metric, a.op, a.value, a.actual);
        }
        assert!(report.passed(), "{name}: {}", report.to_json());
    }
}
