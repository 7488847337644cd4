//! Random operation sequences against a live orchestrator.

use std::collections::BTreeSet;

use proctor_core::canonical;
use proctor_core::domain::{ModelId, Role, SuiteState};
use proctor_core::integrity::Salt;
use proctor_core::orchestrator::{requests, Event, ProtocolConfig};
use proctor_core::SigningIdentity;
use rand::Rng;

use super::Harness;

#[derive(Debug, Clone)]
pub enum Op {
    Submit(usize),
    BadSubmit(usize),
    Review(i64),
    Advance(u64),
    Model(u8),
    JoinCohort(usize),
    Resolve,
}

/// Draws an operation with the same mix as the property tests.
pub fn random_op<R: Rng>(rng: &mut R) -> Op {
    match rng.gen_range(0..14) {
        0..=3 => Op::Submit(rng.gen_range(0..3)),
        4 => Op::BadSubmit(rng.gen_range(0..3)),
        5..=7 => Op::Review(rng.gen_range(-1..=2)),
        8..=10 => Op::Advance(rng.gen_range(1..4)),
        11 => Op::Model(rng.gen_range(0..=10)),
        12 => Op::JoinCohort(rng.gen_range(0..4)),
        _ => Op::Resolve,
    }
}

pub struct Run {
    pub h: Harness,
    contributors: Vec<SigningIdentity>,
    reviewers: Vec<SigningIdentity>,
    models: Vec<(SigningIdentity, ModelId)>,
    deposited: u64,
}

impl Run {
    pub fn new(capacity: usize, hold: f64, seed: u64) -> Self {
        let cfg = ProtocolConfig {
            capacity,
            hold_fraction: hold,
            max_hold_share: 1.0,
            min_reviews: 2,
            max_window_index: 3,
            ..ProtocolConfig::default()
        };
        let mut h = Harness::new(cfg, seed);
        let contributors = (0..3).map(|_| h.participant(Role::Contributor, 200).0).collect();
        let reviewers = h.reviewers(4);
        Self {
            h,
            contributors,
            reviewers,
            models: Vec::new(),
            deposited: 3 * 200 + 4 * 100,
        }
    }

    fn active(&self, who: &SigningIdentity) -> bool {
        self.h.orch.state().participants[&requests::participant_id(who)].is_active()
    }

    pub fn step(&mut self, op: &Op) {
        match op {
            Op::Submit(i) => {
                if self.active(&self.contributors[*i]) {
                    let c = self.contributors[*i].clone();
                    self.h.submit(&c, 3);
                }
            }
            Op::BadSubmit(i) => {
                if self.active(&self.contributors[*i]) {
                    let p = self.h.next_payload(3);
                    let mut sub = requests::suite_submission(&self.contributors[*i], self.h.stream, p, Salt([1; 16]));
                    sub.salt = Salt([0; 16]);
                    self.h.orch.submit_test(sub).unwrap();
                }
            }
            Op::Review(r) => {
                let reviewers: Vec<_> = self.reviewers.iter().filter(|r| self.active(r)).cloned().collect();
                self.h.review_all(&reviewers, *r);
            }
            Op::Advance(d) => self.h.orch.advance_days(*d).unwrap(),
            Op::Model(theta) => {
                let m = self.h.model(*theta as f64 / 10.0);
                self.models.push(m);
            }
            Op::JoinCohort(i) => {
                if let Some((creator, m)) = self.models.get(*i) {
                    let sig = requests::cohort_join(creator, *m, self.h.stream);
                    self.h.orch.join_cohort(*m, self.h.stream, sig).unwrap();
                }
            }
            Op::Resolve => {
                self.h.orch.resolve_pending_cases().unwrap();
            }
        }
    }

    /// Violations of the state invariants: reservoir capacity and credit
    /// conservation.
    pub fn state_violations(&self) -> Vec<String> {
        let st = self.h.orch.state();
        let mut out = Vec::new();
        for s in st.streams.values() {
            if s.reservoir.live.len() > st.config.capacity {
                out.push(format!("{} live suites exceed capacity {}", s.reservoir.live.len(), st.config.capacity));
            }
        }
        if st.total_credits() != self.deposited {
            out.push(format!("credits {} != deposited {}", st.total_credits(), self.deposited));
        }
        out
    }

    /// Tallies from the log: (model, suite) pairs scored twice and scores
    /// recorded after the suite was published.
    pub fn log_violations(&self) -> LogTally {
        let mut tally = LogTally::default();
        let mut scored = BTreeSet::new();
        let mut published = BTreeSet::new();
        for rec in self.h.orch.audit().snapshot_from(0) {
            match canonical::from_bytes::<Event>(&rec.payload).unwrap() {
                Event::ScoreRecorded { record } => {
                    tally.records += 1;
                    if !scored.insert((record.model_id, record.test_id)) {
                        tally.duplicates += 1;
                    }
                    if published.contains(&record.test_id) {
                        tally.after_publication += 1;
                    }
                }
                Event::SuitePublished { id, .. } => {
                    published.insert(id);
                }
                _ => {}
            }
        }
        let st = self.h.orch.state();
        tally.published = published.len() as u64;
        tally.unpublished_again = published.iter().filter(|id| st.suites[*id].state != SuiteState::Published).count() as u64;
        tally
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogTally {
    pub records: u64,
    pub published: u64,
    pub duplicates: u64,
    pub after_publication: u64,
    pub unpublished_again: u64,
}

impl LogTally {
    pub fn clean(&self) -> bool {
        self.duplicates == 0 && self.after_publication == 0 && self.unpublished_again == 0
    }
}
