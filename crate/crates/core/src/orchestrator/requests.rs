//! Builders for signed participant requests.
//!
//! Each function produces exactly the bytes the orchestrator verifies, so
//! clients, the simulator and tests share one signing path.

use std::collections::BTreeSet;

use super::engine::{ModelRegistration, RegistrationRequest, SuiteSubmission};
use super::event::{
    CohortJoinBody, ModelRegistrationBody, RegistrationBody, RevealRequestBody, ScoreCheckBody,
    SubmissionBody,
};
use crate::canonical::SCHEMA_VERSION;
use crate::domain::{
    CredentialClaim, EndpointDescriptor, ModelId, ParticipantId, Rating, ReviewBody, Role,
    StreamId, SuitePayload, TestId,
};
use crate::integrity::{commit, Salt, Signature, SigningIdentity};

pub fn participant_id(identity: &SigningIdentity) -> ParticipantId {
    ParticipantId::for_key(&identity.public_key())
}

pub fn registration(
    identity: &SigningIdentity,
    role: Role,
    credentials: Vec<CredentialClaim>,
    stake: u64,
) -> RegistrationRequest {
    let body = RegistrationBody {
        role,
        public_key: identity.public_key(),
        credentials,
        stake,
    };
    RegistrationRequest {
        proof: identity.sign_canonical(&body),
        body,
    }
}

/// Commits to `payload` under `salt` and signs the public half.
pub fn suite_submission(
    identity: &SigningIdentity,
    stream: StreamId,
    payload: SuitePayload,
    salt: Salt,
) -> SuiteSubmission {
    let body = SubmissionBody {
        stream,
        digest: commit(&payload.canonical_bytes(), &salt).digest,
        item_count: payload.items.len() as u32,
        schema_version: SCHEMA_VERSION,
    };
    SuiteSubmission {
        contributor: participant_id(identity),
        signature: identity.sign_canonical(&body),
        body,
        payload,
        salt,
    }
}

pub fn model_registration(
    identity: &SigningIdentity,
    endpoint: EndpointDescriptor,
    streams: BTreeSet<StreamId>,
    nonce: u64,
) -> ModelRegistration {
    let body = ModelRegistrationBody {
        endpoint: endpoint.redacted(),
        streams,
        nonce,
    };
    ModelRegistration {
        creator: participant_id(identity),
        signature: identity.sign_canonical(&body),
        body,
        auth_token: endpoint.auth_token,
    }
}

pub fn model_id(identity: &SigningIdentity, nonce: u64) -> ModelId {
    ModelId::assign(&participant_id(identity), nonce)
}

pub fn cohort_join(identity: &SigningIdentity, model: ModelId, stream: StreamId) -> Signature {
    identity.sign_canonical(&CohortJoinBody { model, stream })
}

pub fn review(identity: &SigningIdentity, test_id: TestId, rating: Rating, rationale: &str) -> (ReviewBody, Signature) {
    let body = ReviewBody {
        test_id,
        rating,
        rationale: rationale.to_string(),
    };
    let sig = identity.sign_canonical(&body);
    (body, sig)
}

pub fn reveal_request(identity: &SigningIdentity, test_id: TestId) -> (RevealRequestBody, Signature) {
    let body = RevealRequestBody {
        test_id,
        reviewer: participant_id(identity),
    };
    let sig = identity.sign_canonical(&body);
    (body, sig)
}

pub fn score_check(
    identity: &SigningIdentity,
    test_id: TestId,
    model: ModelId,
    item: u32,
    rescored: f64,
) -> (ScoreCheckBody, Signature) {
    let body = ScoreCheckBody {
        test_id,
        model,
        item,
        rescored,
    };
    let sig = identity.sign_canonical(&body);
    (body, sig)
}
