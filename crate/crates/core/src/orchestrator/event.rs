//! Audit events and the signed request bodies participants submit.
//!
//! Every state change is one `Event`. Its canonical encoding is the audit
//! payload, so replaying the payloads through `State::apply` rebuilds the
//! public state exactly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use crate::canonical::SchemaHeader;
use crate::domain::{
    CohortId, CredentialClaim, EndpointDescriptor, Lane, ModelId, ParticipantId, Rating, Review,
    Role, ScoreRecord, StreamId, TestId, VerifiedCredential,
};
use crate::integrity::{Digest, PublicKey, Signature};

/// Signed by the registering key to prove possession.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationBody {
    pub role: Role,
    pub public_key: PublicKey,
    pub credentials: Vec<CredentialClaim>,
    pub stake: u64,
}

/// The public half of a suite submission, signed by the contributor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionBody {
    pub stream: StreamId,
    pub digest: Digest,
    pub item_count: u32,
    pub schema_version: u8,
}

/// Model registration, signed by the creator. The endpoint is signed in
/// redacted form so the token never needs to be part of signed material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistrationBody {
    pub endpoint: EndpointDescriptor,
    pub streams: BTreeSet<StreamId>,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortJoinBody {
    pub model: ModelId,
    pub stream: StreamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealRequestBody {
    pub test_id: TestId,
    pub reviewer: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheckBody {
    pub test_id: TestId,
    pub model: ModelId,
    pub item: u32,
    pub rescored: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseKind {
    CommitMismatch,
    ScoreLogMismatch,
    LeakageFlag,
    SpamPattern,
    ConsensusDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Pending,
    Slashed { amount: u64, removed: bool },
    Dismissed,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisconductCase {
    pub id: u64,
    pub subject: ParticipantId,
    pub kind: CaseKind,
    /// Audit sequence numbers backing the case.
    pub evidence: Vec<u64>,
    pub resolution: Resolution,
    pub opened_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InvalidationReason {
    Validation(Vec<String>),
    CommitMismatch,
    Misconduct(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetirementReason {
    CapacityPressure,
    ZeroWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemovalReason {
    BelowThreshold,
    Misconduct(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Genesis {
        schema: SchemaHeader,
        config: ProtocolConfig,
        config_hash: Digest,
        server_key: PublicKey,
        /// Commitment to the round-0 beacon seed.
        beacon_commitment: Digest,
    },
    BeaconRevealed {
        round: u64,
        seed: [u8; 32],
        next_commitment: Digest,
    },
    ClockAdvanced {
        tick: u64,
    },
    ParticipantRegistered {
        id: ParticipantId,
        role: Role,
        public_key: PublicKey,
        credentials: Vec<VerifiedCredential>,
        stake: u64,
        proof: Signature,
    },
    SuiteCommitted {
        id: TestId,
        contributor: ParticipantId,
        body: SubmissionBody,
        signature: Signature,
    },
    SuiteInvalidated {
        id: TestId,
        reason: InvalidationReason,
    },
    SuiteQueued {
        id: TestId,
    },
    SuiteAdmitted {
        id: TestId,
        lane: Lane,
        round: u64,
    },
    ModelRegistered {
        id: ModelId,
        creator: ParticipantId,
        body: ModelRegistrationBody,
        signature: Signature,
    },
    CohortJoined {
        model: ModelId,
        stream: StreamId,
        cohort: CohortId,
        signature: Signature,
    },
    ScoreRecorded {
        record: ScoreRecord,
    },
    ReviewersAssigned {
        test_id: TestId,
        reviewers: Vec<ParticipantId>,
        deadline: u64,
        round: u64,
    },
    ReviewLapsed {
        test_id: TestId,
        reviewer: ParticipantId,
    },
    RevealServed {
        test_id: TestId,
        reviewer: ParticipantId,
        round: u64,
        items: Vec<u32>,
    },
    ReviewSubmitted {
        review: Review,
    },
    QualityFinalized {
        test_id: TestId,
        /// (reviewer, rating, reviewer reputation used as weight input).
        reviews: Vec<(ParticipantId, Rating, f64)>,
        q_bar: f64,
    },
    WeightAssigned {
        test_id: TestId,
        contributor_reputation: f64,
        weight: f64,
    },
    ReputationsRefreshed {
        test_id: TestId,
        contributor: (ParticipantId, f64),
        reviewers: Vec<(ParticipantId, f64)>,
    },
    SuiteRetired {
        id: TestId,
        reason: RetirementReason,
    },
    SuitePublished {
        id: TestId,
        bundle_hash: Digest,
    },
    WindowClosed {
        stream: StreamId,
        cohort: CohortId,
        models: Vec<ModelId>,
        tests: Vec<TestId>,
    },
    WindowEmpty {
        stream: StreamId,
        cohort: CohortId,
    },
    WindowEvaluated {
        stream: StreamId,
        cohort: CohortId,
    },
    WindowsScheduled {
        stream: StreamId,
        origin: u64,
        first_index: u32,
    },
    ModelConverged {
        id: ModelId,
    },
    CaseOpened {
        case: MisconductCase,
    },
    CaseResolved {
        id: u64,
        resolution: Resolution,
        /// Part of a requested slash the stake could not cover.
        shortfall: u64,
    },
    ParticipantRemoved {
        id: ParticipantId,
        reason: RemovalReason,
    },
    RewardsDistributed {
        payouts: Vec<(ParticipantId, u64)>,
    },
    LeaderboardsRebuilt {
        hash: Digest,
    },
}

impl Event {
    /// Kind string stored in the audit entry header.
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Genesis { .. } => "genesis",
            Event::BeaconRevealed { .. } => "beacon-revealed",
            Event::ClockAdvanced { .. } => "clock-advanced",
            Event::ParticipantRegistered { .. } => "participant-registered",
            Event::SuiteCommitted { .. } => "suite-committed",
            Event::SuiteInvalidated { .. } => "suite-invalidated",
            Event::SuiteQueued { .. } => "suite-queued",
            Event::SuiteAdmitted { .. } => "suite-admitted",
            Event::ModelRegistered { .. } => "model-registered",
            Event::CohortJoined { .. } => "cohort-joined",
            Event::ScoreRecorded { .. } => "score-recorded",
            Event::ReviewersAssigned { .. } => "reviewers-assigned",
            Event::ReviewLapsed { .. } => "review-lapsed",
            Event::RevealServed { .. } => "reveal-served",
            Event::ReviewSubmitted { .. } => "review-submitted",
            Event::QualityFinalized { .. } => "quality-finalized",
            Event::WeightAssigned { .. } => "weight-assigned",
            Event::ReputationsRefreshed { .. } => "reputations-refreshed",
            Event::SuiteRetired { .. } => "suite-retired",
            Event::SuitePublished { .. } => "suite-published",
            Event::WindowClosed { .. } => "window-closed",
            Event::WindowEmpty { .. } => "window-empty",
            Event::WindowEvaluated { .. } => "window-evaluated",
            Event::WindowsScheduled { .. } => "windows-scheduled",
            Event::ModelConverged { .. } => "model-converged",
            Event::CaseOpened { .. } => "case-opened",
            Event::CaseResolved { .. } => "case-resolved",
            Event::ParticipantRemoved { .. } => "participant-removed",
            Event::RewardsDistributed { .. } => "rewards-distributed",
            Event::LeaderboardsRebuilt { .. } => "leaderboards-rebuilt",
        }
    }
}
