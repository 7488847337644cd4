//! Protocol engine for proctored, community-governed model benchmarking.
//!
//! Contributors commit to private test suites, models are evaluated once per
//! live suite, reviewers rate suite quality, and reputation-weighted scores
//! feed three public leaderboards. Retired suites are published in full so
//! anyone can audit them against the original commitments, and every state
//! change lands in a signed, hash-chained audit log that can be replayed to
//! reconstruct the leaderboards byte for byte.
//!
//! Module map:
//!
//! - [`domain`]: protocol entities, scorer rules, suite validation.
//! - [`integrity`]: hashing, commitments, signatures, randomness beacon, audit log.
//! - [`scoring`]: quality consensus, test weights, reputations, leaderboards.
//! - [`reservoir`]: live reservoir, cohort windows, publication bundles.
//! - [`orchestrator`]: the single-writer coordination state machine.
//! - [`sim`]: deterministic adversarial simulation harness.

#[macro_use]
mod bytes;

pub mod canonical;
pub mod domain;
pub mod integrity;
pub mod orchestrator;
pub mod reservoir;
pub mod scoring;
pub mod sim;

pub use domain::{
    CohortId, EvalMode, ModelId, ModelRecord, Participant, ParticipantId, Review, Role,
    ScoreRecord, ScorerRule, StreamId, SuitePayload, SuiteState, TestId, TestItem, TestSuite,
};
pub use integrity::{Commitment, Digest, PublicKey, Salt, Signature, SigningIdentity};
pub use orchestrator::{Orchestrator, OrchestratorError, ProtocolConfig};
pub use scoring::{ModelScore, QualityConsensus};
