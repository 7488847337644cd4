//! Protocol entities and their validation rules.
//!
//! Everything here is an immutable value after construction; mutation of
//! protocol state happens only in the orchestrator's event loop.

mod scorer;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::integrity::{hash_parts, Digest, PublicKey, Signature};

pub use scorer::{run_scorer, ScorerError, ScorerRule};
pub use validate::{validate_test_suite, ValidationReport, Violation};

byte_newtype!(
    /// Participant identity: the SHA-256 of the participant's public key.
    ParticipantId,
    32
);
byte_newtype!(StreamId, 32);
byte_newtype!(TestId, 32);
byte_newtype!(ModelId, 32);
byte_newtype!(CohortId, 32);
byte_newtype!(AssignmentId, 32);

impl ParticipantId {
    pub fn for_key(key: &PublicKey) -> Self {
        ParticipantId(hash_parts(&[b"participant", key.as_bytes()]).0)
    }
}

impl StreamId {
    pub fn named(name: &str) -> Self {
        StreamId(hash_parts(&[b"stream:", name.as_bytes()]).0)
    }
}

impl TestId {
    pub fn for_commitment(contributor: &ParticipantId, digest: &Digest) -> Self {
        TestId(hash_parts(&[b"suite", contributor.as_bytes(), digest.as_bytes()]).0)
    }
}

impl ModelId {
    pub fn assign(creator: &ParticipantId, seq: u64) -> Self {
        ModelId(hash_parts(&[b"model", creator.as_bytes(), &seq.to_le_bytes()]).0)
    }
}

impl CohortId {
    pub fn for_window(stream: &StreamId, index: u32) -> Self {
        CohortId(hash_parts(&[b"cohort", stream.as_bytes(), &index.to_le_bytes()]).0)
    }
}

impl AssignmentId {
    pub fn for_test(test: &TestId) -> Self {
        AssignmentId(hash_parts(&[b"assignment", test.as_bytes()]).0)
    }
}

/// Logical timestamp: `tick` is the orchestrator's clock, `seq` the audit
/// sequence number of the event that produced the value. Ordering is
/// lexicographic, which agrees with event order because ticks never go back.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Stamp {
    pub tick: u64,
    pub seq: u64,
}

impl Stamp {
    pub const fn new(tick: u64, seq: u64) -> Self {
        Self { tick, seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Contributor,
    Reviewer,
    ModelCreator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticipantStatus {
    Active,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CredentialKind {
    EduEmail,
    ScholarProfile,
    CodeHostProfile,
}

/// Credential as claimed at registration; bonus points are assigned by the
/// server from its fixed table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialClaim {
    pub kind: CredentialKind,
    pub evidence_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedCredential {
    pub kind: CredentialKind,
    pub evidence_hash: Digest,
    pub bonus_points: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub role: Role,
    pub public_key: PublicKey,
    pub credentials: Vec<VerifiedCredential>,
    /// Credit units; never negative.
    pub stake: u64,
    /// Slash amounts that could not be collected because stake ran out.
    pub slash_shortfall: u64,
    pub status: ParticipantStatus,
    pub registered_at: Stamp,
}

impl Participant {
    pub fn is_active(&self) -> bool {
        self.status == ParticipantStatus::Active
    }

    pub fn bonus_points(&self) -> u64 {
        self.credentials.iter().map(|c| c.bonus_points as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub prompt: String,
    pub reference_answer: String,
    pub scorer: ScorerRule,
}

/// The private part of a suite: its items with their scoring rules. The
/// canonical encoding of this value is what a commitment binds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuitePayload {
    pub items: Vec<TestItem>,
}

impl SuitePayload {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::canonical::to_bytes(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteState {
    Committed,
    Live,
    Retired,
    Published,
    Invalidated,
}

impl SuiteState {
    /// Lifecycle graph: Committed -> Live -> Retired -> Published, and any
    /// non-invalidated state -> Invalidated.
    pub fn can_transition(self, to: SuiteState) -> bool {
        use SuiteState::*;
        matches!(
            (self, to),
            (Committed, Live) | (Live, Retired) | (Retired, Published)
        ) || (to == Invalidated && self != Invalidated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lane {
    Immediate,
    CohortHold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub id: TestId,
    pub contributor: ParticipantId,
    pub stream: StreamId,
    pub item_count: u32,
    pub digest: Digest,
    pub schema_version: u8,
    pub submitted_at: Stamp,
    pub admitted_at: Option<Stamp>,
    pub lane: Option<Lane>,
    pub state: SuiteState,
    /// Final consensus quality, set once at review completion.
    pub quality: Option<f64>,
    /// Test weight, set once at review completion.
    pub weight: Option<f64>,
    pub published_at: Option<Stamp>,
}

/// Review rating in {-1, 0, 1, 2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rating(i8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("rating {0} outside {{-1, 0, 1, 2}}")]
pub struct RatingError(pub i64);

impl Rating {
    pub const MIN: i8 = -1;
    pub const MAX: i8 = 2;

    pub fn new(value: i64) -> Result<Self, RatingError> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&value) {
            Ok(Rating(value as i8))
        } else {
            Err(RatingError(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Nearest rating to `x`, clamped into range.
    pub fn nearest(x: f64) -> Self {
        let r = if x.is_nan() { 0.0 } else { x.round() };
        Rating(r.clamp(Self::MIN as f64, Self::MAX as f64) as i8)
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The bytes a reviewer signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewBody {
    pub test_id: TestId,
    pub rating: Rating,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub test_id: TestId,
    pub reviewer: ParticipantId,
    pub rating: Rating,
    pub rationale: String,
    pub signature: Signature,
    pub submitted_at: Stamp,
}

impl Review {
    pub fn body(&self) -> ReviewBody {
        ReviewBody {
            test_id: self.test_id,
            rating: self.rating,
            rationale: self.rationale.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    Immediate,
    Cohort,
}

/// Why some item scores of a record were forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalAnnotation {
    Timeout { failed_items: u32 },
    Unreachable { failed_items: u32 },
}

/// One (model, suite) evaluation. Raw responses are kept out of the record
/// itself and bound through `response_hash`; they travel with the private
/// store until publication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub test_id: TestId,
    pub model_id: ModelId,
    pub item_scores: Vec<f64>,
    pub aggregate: f64,
    pub mode: EvalMode,
    pub cohort: Option<CohortId>,
    pub evaluated_at: Stamp,
    pub response_hash: Digest,
    pub annotation: Option<EvalAnnotation>,
}

/// Arithmetic mean of item scores; zero for an empty list.
pub fn mean_item_score(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn response_hash(responses: &[String]) -> Digest {
    crate::integrity::sha256(&crate::canonical::to_bytes(responses))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreStatus {
    Preliminary,
    Converged,
}

/// Where and how to query a model. The auth token never appears in logs or
/// debug output.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub url: String,
    pub auth_token: String,
    pub max_qps: f64,
    pub timeout_ms: u64,
}

impl EndpointDescriptor {
    pub fn redacted(&self) -> Self {
        Self {
            auth_token: String::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.url.trim().is_empty() {
            return Err("empty endpoint url".into());
        }
        if !(self.max_qps.is_finite() && self.max_qps > 0.0) {
            return Err("max_qps must be a positive real".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        Ok(())
    }
}

impl fmt::Debug for EndpointDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointDescriptor")
            .field("url", &self.url)
            .field("auth_token", &"<redacted>")
            .field("max_qps", &self.max_qps)
            .field("timeout_ms", &self.timeout_ms)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: ModelId,
    pub creator: ParticipantId,
    /// Stored redacted.
    pub endpoint: EndpointDescriptor,
    pub registered_at: Stamp,
    pub streams: BTreeSet<StreamId>,
    pub score_status: ScoreStatus,
}
