//! Shared fixtures for the protocol benchmarks.

use std::collections::BTreeMap;
use std::sync::Arc;

use proctor_core::domain::{Lane, Rating, Role, Stamp};
use proctor_core::integrity::sha256;
use proctor_core::orchestrator::{requests, VirtualSleeper};
use proctor_core::reservoir::Reservoir;
use proctor_core::scoring::WeightedScore;
use proctor_core::sim::world::{payload, sim_descriptor, SimConnector, SimModel};
use proctor_core::sim::ItemTag;
use proctor_core::{Orchestrator, ProtocolConfig, Salt, SigningIdentity, StreamId, TestId};

/// Deterministic value in `[0, 1)` for index `i`.
pub fn unit(i: u64) -> f64 {
    let d = sha256(&i.to_le_bytes());
    u64::from_le_bytes(d.0[..8].try_into().unwrap()) as f64 / (u64::MAX as f64 + 1.0)
}

pub fn test_id(i: u64) -> TestId {
    TestId(sha256(&i.to_be_bytes()).0)
}

/// A full reservoir of `n` suites, a quarter of them without a final weight.
pub fn reservoir(n: usize) -> (Reservoir, BTreeMap<TestId, Option<f64>>) {
    let mut r = Reservoir::new(StreamId::named("general"), n);
    let mut weights = BTreeMap::new();
    for i in 0..n as u64 {
        let id = test_id(i);
        r.admit(id, Stamp::new(i + 1, 0), Lane::Immediate, &weights, |_| true)
            .expect("reservoir has room");
        let w = if i % 4 == 0 { None } else { Some((unit(i) * 1.5).max(0.0)) };
        weights.insert(id, w);
    }
    (r, weights)
}

pub fn weighted_scores(n: usize) -> Vec<WeightedScore> {
    (0..n as u64)
        .map(|i| WeightedScore {
            weight: unit(i) * 1.7,
            score: unit(i + 1_000_000),
            suite_published_at: (i % 3 == 0).then(|| Stamp::new(i, 0)),
        })
        .collect()
}

pub fn pairs(n: usize) -> Vec<(f64, f64)> {
    (0..n as u64).map(|i| (unit(i) * 5.0, unit(i) * 4.0 + unit(i + 7))).collect()
}

/// An instance with one model and `suites` submitted and reviewed suites.
pub fn instance(suites: u64, capacity: usize) -> Orchestrator {
    let cfg = ProtocolConfig {
        capacity,
        hold_fraction: 0.0,
        min_reviews: 2,
        ..ProtocolConfig::default()
    };
    let connector = Arc::new(SimConnector::new());
    let mut orch = Orchestrator::new(cfg, SigningIdentity::from_secret([9; 32]), [1; 32], Arc::clone(&connector) as _)
        .expect("valid config")
        .with_sleeper(Arc::new(VirtualSleeper::default()));
    let alice = SigningIdentity::from_secret([1; 32]);
    orch.register_participant(requests::registration(&alice, Role::Contributor, Vec::new(), 200))
        .expect("register contributor");
    let reviewers: Vec<_> = (10..14).map(|i| SigningIdentity::from_secret([i; 32])).collect();
    for r in &reviewers {
        orch.register_participant(requests::registration(r, Role::Reviewer, Vec::new(), 100))
            .expect("register reviewer");
    }
    let creator = SigningIdentity::from_secret([2; 32]);
    orch.register_participant(requests::registration(&creator, Role::ModelCreator, Vec::new(), 0))
        .expect("register creator");
    connector.insert(
        "sim://m",
        Arc::new(SimModel {
            run_key: [0; 32],
            name: "m".into(),
            theta: 0.6,
            leaks: Default::default(),
        }),
    );
    let stream = StreamId::named("general");
    orch.register_model(requests::model_registration(&creator, sim_descriptor("sim://m"), [stream].into(), 0))
        .expect("register model");
    for s in 0..suites {
        let mut salt = [0; 16];
        salt[..8].copy_from_slice(&s.to_le_bytes());
        let id = orch
            .submit_test(requests::suite_submission(&alice, stream, payload(&ItemTag::Normal, s, 5), Salt(salt)))
            .expect("submit")
            .id();
        for (k, r) in reviewers.iter().enumerate() {
            let rid = requests::participant_id(r);
            if !orch.review_queue(&rid).iter().any(|t| t.test_id == id) {
                continue;
            }
            let (req, sig) = requests::reveal_request(r, id);
            orch.reveal(req, sig).expect("reveal");
            let rating = Rating::new(((s + k as u64) % 4) as i64 - 1).expect("rating in range");
            let (body, sig) = requests::review(r, id, rating, "");
            orch.submit_review(rid, body, sig).expect("review");
        }
        orch.advance_days(1).expect("advance");
    }
    orch
}
