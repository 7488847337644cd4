//! Wire types of the HTTP API, shared by the server and the client.
//!
//! Request bodies are the orchestrator's own signed request types encoded
//! as JSON; ids, keys and signatures travel as lowercase hex.

use std::collections::BTreeMap;

use base64::Engine as _;
use proctor_core::domain::{ReviewBody, Stamp};
use proctor_core::reservoir::PublicationBundle;
use proctor_core::scoring::{ContributorEntry, CrossStreamEntry, ReviewerEntry, StreamBoard};
use proctor_core::{CohortId, Digest, ModelId, ParticipantId, Signature, StreamId, TestId};
use serde::{Deserialize, Serialize};

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// Machine-readable error kind, e.g. `NotAssigned`.
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantCreated {
    pub participant: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCreated {
    pub model: ModelId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSubmission {
    pub reviewer: ParticipantId,
    pub body: ReviewBody,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortJoin {
    pub stream: StreamId,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortJoined {
    pub cohort: CohortId,
}

/// Query string of a reveal request: the reviewer signs
/// `RevealRequestBody { test_id, reviewer }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealQuery {
    pub reviewer: ParticipantId,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealResponse {
    pub test_id: TestId,
    pub watermark: String,
    pub served_at: u64,
    pub item_count: u32,
    /// Base64 PNG per revealed item.
    pub images: Vec<String>,
}

impl RevealResponse {
    pub fn png_bytes(&self) -> Result<Vec<Vec<u8>>, base64::DecodeError> {
        self.images.iter().map(|i| B64.decode(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBoards {
    pub streams: Vec<StreamBoard>,
    pub cross_stream: Vec<CrossStreamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "entries", rename_all = "snake_case")]
pub enum Board {
    Contributors(Vec<ContributorEntry>),
    Reviewers(Vec<ReviewerEntry>),
    Models(ModelBoards),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardResponse {
    pub generated_at: Stamp,
    /// Hash of the full leaderboard export the board was cut from.
    pub export_hash: Digest,
    #[serde(flatten)]
    pub board: Board,
}

/// A publication bundle with file contents in base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub test_id: TestId,
    pub files: BTreeMap<String, String>,
}

impl BundleFiles {
    pub fn encode(test_id: TestId, bundle: &PublicationBundle) -> Self {
        Self {
            test_id,
            files: bundle.files.iter().map(|(k, v)| (k.clone(), B64.encode(v))).collect(),
        }
    }

    pub fn decode(&self) -> Result<PublicationBundle, base64::DecodeError> {
        let files = self
            .files
            .iter()
            .map(|(k, v)| Ok((k.clone(), B64.decode(v)?)))
            .collect::<Result<_, base64::DecodeError>>()?;
        Ok(PublicationBundle { files })
    }
}

pub fn encode_png(bytes: &[u8]) -> String {
    B64.encode(bytes)
}
