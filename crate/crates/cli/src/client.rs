//! Blocking client for the coordination server's API.

use proctor_core::domain::{AssignmentId, Review, ReviewBody};
use proctor_core::orchestrator::{ModelRegistration, RegistrationRequest, ReviewTask, SubmitOutcome, SuiteSubmission};
use proctor_core::reservoir::PublicationBundle;
use proctor_core::{CohortId, ModelId, ParticipantId, Signature, StreamId, TestId};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{
    ApiError, BoardResponse, BundleFiles, CohortJoin, CohortJoined, ModelCreated,
    ParticipantCreated, RevealResponse, ReviewSubmission,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("{kind}: {message}")]
    Api { status: u16, kind: String, message: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn kind(&self) -> &str {
        match self {
            ClientError::Transport(_) => "Transport",
            ClientError::Api { kind, .. } => kind,
            ClientError::Decode(_) => "Decode",
        }
    }
}

pub struct ApiClient {
    base: String,
    http: reqwest::blocking::Client,
}

type Result<T> = std::result::Result<T, ClientError>;

fn transport(e: reqwest::Error) -> ClientError {
    ClientError::Transport(e.to_string())
}

impl ApiClient {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().map_err(transport)?;
        Err(match serde_json::from_str::<ApiError>(&text) {
            Ok(e) => ClientError::Api {
                status,
                kind: e.error,
                message: e.message,
            },
            Err(_) => ClientError::Api {
                status,
                kind: "Http".into(),
                message: format!("status {status}"),
            },
        })
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let bytes = resp.bytes().map_err(transport)?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(self.url(path)).json(body).send().map_err(transport)?;
        Self::decode(Self::check(resp)?)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self.http.get(self.url(path)).send().map_err(transport)?;
        Self::decode(Self::check(resp)?)
    }

    pub fn register(&self, req: &RegistrationRequest) -> Result<ParticipantId> {
        self.post::<_, ParticipantCreated>("/v1/participants", req).map(|r| r.participant)
    }

    pub fn submit(&self, sub: &SuiteSubmission) -> Result<SubmitOutcome> {
        self.post("/v1/tests", sub)
    }

    pub fn review(&self, reviewer: ParticipantId, body: ReviewBody, signature: Signature) -> Result<()> {
        let path = format!("/v1/tests/{}/reviews", body.test_id);
        let sub = ReviewSubmission {
            reviewer,
            body,
            signature,
        };
        let resp = self.http.post(self.url(&path)).json(&sub).send().map_err(transport)?;
        Self::check(resp).map(drop)
    }

    pub fn reviews(&self, test: &TestId) -> Result<Vec<Review>> {
        self.get(&format!("/v1/tests/{test}/reviews"))
    }

    pub fn register_model(&self, reg: &ModelRegistration) -> Result<ModelId> {
        self.post::<_, ModelCreated>("/v1/models", reg).map(|r| r.model)
    }

    pub fn join_cohort(&self, model: &ModelId, stream: StreamId, signature: Signature) -> Result<CohortId> {
        let body = CohortJoin { stream, signature };
        self.post::<_, CohortJoined>(&format!("/v1/models/{model}/cohort"), &body)
            .map(|r| r.cohort)
    }

    pub fn leaderboard(&self, kind: &str) -> Result<BoardResponse> {
        self.get(&format!("/v1/leaderboards/{kind}"))
    }

    pub fn bundle(&self, test: &TestId) -> Result<PublicationBundle> {
        let files: BundleFiles = self.get(&format!("/v1/tests/{test}/bundle"))?;
        files.decode().map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn audit(&self, from: u64) -> Result<String> {
        let resp = self
            .http
            .get(self.url("/v1/audit"))
            .query(&[("from", from)])
            .send()
            .map_err(transport)?;
        Self::check(resp)?.text().map_err(transport)
    }

    pub fn queue(&self, reviewer: &ParticipantId) -> Result<Vec<ReviewTask>> {
        self.get(&format!("/v1/reviewers/{reviewer}/queue"))
    }

    pub fn reveal(&self, assignment: &AssignmentId, reviewer: &ParticipantId, signature: &Signature) -> Result<RevealResponse> {
        let resp = self
            .http
            .get(self.url(&format!("/v1/reveals/{assignment}")))
            .query(&[("reviewer", reviewer.to_hex()), ("signature", signature.to_hex())])
            .send()
            .map_err(transport)?;
        Self::decode(Self::check(resp)?)
    }
}
