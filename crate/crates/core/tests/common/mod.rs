//! Shared fixtures for integration tests.
#![allow(dead_code)]

pub mod fuzz;

use std::collections::BTreeSet;
use std::sync::Arc;

use proctor_core::domain::{EndpointDescriptor, ModelId, ParticipantId, Rating, Role, StreamId, SuitePayload};
use proctor_core::integrity::{Salt, SigningIdentity};
use proctor_core::orchestrator::{
    requests, Connector, ModelEndpoint, Orchestrator, ProtocolConfig, SubmitOutcome, VirtualSleeper,
};
use proctor_core::sim::world::{payload, sim_descriptor, ItemTag, SimConnector, SimModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Harness {
    pub orch: Orchestrator,
    pub connector: Arc<SimConnector>,
    pub rng: ChaCha8Rng,
    pub stream: StreamId,
    next_suite: u64,
    next_model: u64,
}

pub fn config(capacity: usize, hold_fraction: f64) -> ProtocolConfig {
    ProtocolConfig {
        capacity,
        hold_fraction,
        max_hold_share: 1.0,
        min_reviews: 2,
        ..ProtocolConfig::default()
    }
}

impl Harness {
    pub fn new(config: ProtocolConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let server = SigningIdentity::generate(&mut rng);
        let connector = Arc::new(SimConnector::new());
        let stream = StreamId::named(&config.streams[0]);
        let orch = Orchestrator::new(config, server, [seed as u8; 32], Arc::clone(&connector) as Arc<dyn Connector>)
            .unwrap()
            .with_sleeper(Arc::new(VirtualSleeper::default()))
            .with_parallel(false);
        Self {
            orch,
            connector,
            rng,
            stream,
            next_suite: 0,
            next_model: 0,
        }
    }

    pub fn participant(&mut self, role: Role, stake: u64) -> (SigningIdentity, ParticipantId) {
        let identity = SigningIdentity::generate(&mut self.rng);
        let id = self
            .orch
            .register_participant(requests::registration(&identity, role, Vec::new(), stake))
            .unwrap();
        (identity, id)
    }

    pub fn reviewers(&mut self, n: usize) -> Vec<SigningIdentity> {
        (0..n).map(|_| self.participant(Role::Reviewer, 100).0).collect()
    }

    /// Registers a simulated model of ability `theta`.
    pub fn model(&mut self, theta: f64) -> (SigningIdentity, ModelId) {
        self.next_model += 1;
        let name = format!("m{}", self.next_model);
        self.model_with(
            Arc::new(SimModel {
                run_key: [3; 32],
                name: name.clone(),
                theta,
                leaks: Arc::new(BTreeSet::new()),
            }),
            sim_descriptor(&format!("sim://{name}")),
        )
    }

    pub fn model_with(&mut self, endpoint: Arc<dyn ModelEndpoint>, desc: EndpointDescriptor) -> (SigningIdentity, ModelId) {
        self.connector.insert(&desc.url, endpoint);
        let (identity, _) = self.participant(Role::ModelCreator, 0);
        let reg = requests::model_registration(&identity, desc, BTreeSet::from([self.stream]), 0);
        let id = self.orch.register_model(reg).unwrap();
        (identity, id)
    }

    pub fn next_payload(&mut self, items: usize) -> SuitePayload {
        self.next_suite += 1;
        payload(&ItemTag::Normal, self.next_suite, items)
    }

    pub fn submit(&mut self, contributor: &SigningIdentity, items: usize) -> SubmitOutcome {
        let p = self.next_payload(items);
        let salt = Salt::random(&mut self.rng);
        self.orch
            .submit_test(requests::suite_submission(contributor, self.stream, p, salt))
            .unwrap()
    }

    /// Every reviewer answers every open task with `rating`.
    pub fn review_all(&mut self, reviewers: &[SigningIdentity], rating: i64) -> usize {
        let mut done = 0;
        for r in reviewers {
            let id = requests::participant_id(r);
            for task in self.orch.review_queue(&id) {
                if !self.orch.review_queue(&id).iter().any(|t| t.test_id == task.test_id) {
                    continue;
                }
                let (req, sig) = requests::reveal_request(r, task.test_id);
                self.orch.reveal(req, sig).unwrap();
                let (body, sig) = requests::review(r, task.test_id, Rating::new(rating).unwrap(), "");
                self.orch.submit_review(id, body, sig).unwrap();
                done += 1;
            }
        }
        done
    }
}
