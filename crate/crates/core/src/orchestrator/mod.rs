//! The coordination server's state machine.
//!
//! All state lives in [`State`] and changes only through [`Event`]s applied
//! by the single writer, [`Orchestrator`]. Each event is appended to the
//! signed audit log right after it is applied, so replaying the log through
//! the same `apply` rebuilds the public state and every leaderboard hash.
//! Secrets (suite payloads and salts, raw model responses, endpoint tokens)
//! live in a separate sealed store that is never logged.

mod boards;
mod config;
mod endpoint;
mod engine;
mod event;
mod replay;
pub mod requests;
mod reveal;
mod state;

pub use config::{
    BonusTable, ConfigError, ProtocolConfig, RetryPolicy, ScoreDecay, StakeMinimums, Thresholds,
    ENV_PREFIX,
};
pub use endpoint::{
    evaluate_model, Connector, EndpointError, ModelEndpoint, Pacer, RealSleeper, Sleeper,
    VirtualSleeper,
};
pub use endpoint::Evaluation;
pub use engine::{
    divergence, Decision, DivergenceReport, ModelRegistration, Orchestrator, RegistrationRequest,
    ReviewTask, SealedStore, SubmitOutcome, SuiteSubmission,
};
pub use event::{
    CaseKind, CohortJoinBody, Event, InvalidationReason, MisconductCase, ModelRegistrationBody,
    RegistrationBody, RemovalReason, Resolution, RetirementReason, RevealRequestBody,
    ScoreCheckBody, SubmissionBody,
};
pub use replay::{replay, replay_text, ReplayReport};
pub use reveal::{render_item_png, RevealView, RevealedItem};
pub use state::{Assignment, ModelState, Slot, SlotStatus, State, StreamState};

use crate::domain::{ModelId, ParticipantId, Role, SuiteState, TestId};
use crate::reservoir::{CohortError, PublishError, ReservoirError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("public key already registered")]
    DuplicateKey,
    #[error("stake {got} below the minimum {need}")]
    InsufficientStake { need: u64, got: u64 },
    #[error("signature does not verify")]
    BadSignature,
    #[error("unknown stream")]
    UnknownStream,
    #[error("a suite with this digest was already submitted")]
    DuplicateSuite,
    #[error("unknown suite {0}")]
    UnknownSuite(TestId),
    #[error("suite {id} cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        id: TestId,
        from: SuiteState,
        to: SuiteState,
    },
    #[error("participant {0} is not active")]
    NotActive(ParticipantId),
    #[error("participant does not hold the {0:?} role")]
    WrongRole(Role),
    #[error("unknown model {0}")]
    UnknownModel(ModelId),
    #[error("model {model} already has a score for suite {test}")]
    DuplicateScore { model: ModelId, test: TestId },
    #[error("reviewer is not assigned to this suite")]
    NotAssigned,
    #[error("review deadline has passed")]
    DeadlineLapsed,
    #[error("reviewer already reviewed this suite")]
    AlreadyReviewed,
    #[error("suite quality is already final")]
    AlreadyFinalized,
    #[error("contributors cannot review their own suites")]
    SelfReview,
    #[error("unknown misconduct case {0}")]
    UnknownCase(u64),
    #[error("case {0} is already resolved")]
    AlreadyResolved(u64),
    #[error("endpoint validation failed: {0}")]
    EndpointValidationFailed(String),
    #[error("suite {0} is not published")]
    NotPublished(TestId),
    #[error("clock cannot move from {now} back to {to}")]
    ClockRewind { now: u64, to: u64 },
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error("audit log: {0}")]
    Audit(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// An event's content disagrees with the state it is applied to.
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
}

pub(crate) fn inconsistent(msg: impl Into<String>) -> OrchestratorError {
    OrchestratorError::Inconsistent(msg.into())
}
