//! The coordination server's HTTP API.
//!
//! One orchestrator behind a mutex is the single writer; every handler runs
//! its critical section on the blocking pool because commands may query
//! model endpoints. Request bodies and tokens are never logged.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use proctor_core::domain::{AssignmentId, Review};
use proctor_core::orchestrator::{
    ModelRegistration, Orchestrator, OrchestratorError, RegistrationRequest, ReviewTask,
    RevealRequestBody, SubmitOutcome, SuiteSubmission,
};
use proctor_core::scoring::LeaderboardExport;
use proctor_core::{ModelId, ParticipantId, TestId};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::api::{
    encode_png, ApiError, Board, BoardResponse, BundleFiles, CohortJoin, CohortJoined,
    ModelBoards, ModelCreated, ParticipantCreated, RevealQuery, RevealResponse, ReviewSubmission,
};

pub type Shared = Arc<Mutex<Orchestrator>>;

#[derive(Debug)]
pub struct Failure {
    status: StatusCode,
    body: ApiError,
}

impl Failure {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                error: kind.to_string(),
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Status code and machine-readable kind for an orchestrator error.
pub fn classify(e: &OrchestratorError) -> (StatusCode, &'static str) {
    use OrchestratorError as E;
    match e {
        E::UnknownParticipant(_) => (StatusCode::NOT_FOUND, "UnknownParticipant"),
        E::UnknownStream => (StatusCode::NOT_FOUND, "UnknownStream"),
        E::UnknownSuite(_) => (StatusCode::NOT_FOUND, "UnknownSuite"),
        E::UnknownModel(_) => (StatusCode::NOT_FOUND, "UnknownModel"),
        E::UnknownCase(_) => (StatusCode::NOT_FOUND, "UnknownCase"),
        E::NotPublished(_) => (StatusCode::NOT_FOUND, "NotPublished"),
        E::DuplicateKey => (StatusCode::CONFLICT, "DuplicateKey"),
        E::DuplicateSuite => (StatusCode::CONFLICT, "DuplicateSuite"),
        E::DuplicateScore { .. } => (StatusCode::CONFLICT, "DuplicateScore"),
        E::AlreadyReviewed => (StatusCode::CONFLICT, "AlreadyReviewed"),
        E::AlreadyFinalized => (StatusCode::CONFLICT, "AlreadyFinalized"),
        E::AlreadyResolved(_) => (StatusCode::CONFLICT, "AlreadyResolved"),
        E::InvalidTransition { .. } => (StatusCode::CONFLICT, "InvalidTransition"),
        E::BadSignature => (StatusCode::UNAUTHORIZED, "BadSignature"),
        E::NotActive(_) => (StatusCode::FORBIDDEN, "NotActive"),
        E::WrongRole(_) => (StatusCode::FORBIDDEN, "WrongRole"),
        E::NotAssigned => (StatusCode::FORBIDDEN, "NotAssigned"),
        E::SelfReview => (StatusCode::FORBIDDEN, "SelfReview"),
        E::DeadlineLapsed => (StatusCode::GONE, "DeadlineLapsed"),
        E::InsufficientStake { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "InsufficientStake"),
        E::EndpointValidationFailed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "EndpointValidationFailed"),
        E::ClockRewind { .. } => (StatusCode::CONFLICT, "ClockRewind"),
        E::Reservoir(_) => (StatusCode::CONFLICT, "Reservoir"),
        E::Cohort(_) => (StatusCode::CONFLICT, "Cohort"),
        E::Publish(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Publish"),
        E::Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Config"),
        E::Audit(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Audit"),
        E::Replay(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Replay"),
        E::Inconsistent(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Inconsistent"),
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        let (status, kind) = classify(&e);
        Failure::new(status, kind, e.to_string())
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))
}

fn parse_id<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, Failure> {
    text.parse()
        .map_err(|_| Failure::new(StatusCode::BAD_REQUEST, "BadRequest", format!("malformed {what}")))
}

/// Runs `f` against the orchestrator on the blocking pool.
async fn with_orch<T, F>(shared: &Shared, f: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce(&mut Orchestrator) -> Result<T, Failure> + Send + 'static,
{
    let shared = Arc::clone(shared);
    tokio::task::spawn_blocking(move || {
        let mut orch = shared.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut orch)
    })
    .await
    .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/v1/participants", post(register_participant))
        .route("/v1/tests", post(submit_test))
        .route("/v1/tests/{id}/reviews", post(submit_review).get(list_reviews))
        .route("/v1/tests/{id}/bundle", get(bundle))
        .route("/v1/models", post(register_model))
        .route("/v1/models/{id}/cohort", post(join_cohort))
        .route("/v1/leaderboards/{kind}", get(leaderboard))
        .route("/v1/audit", get(audit))
        .route("/v1/reveals/{assignment}", get(reveal))
        .route("/v1/reviewers/{id}/queue", get(review_queue))
        .with_state(shared)
}

async fn register_participant(State(s): State<Shared>, body: Bytes) -> Result<Json<ParticipantCreated>, Failure> {
    let req: RegistrationRequest = parse(&body)?;
    let participant = with_orch(&s, move |o| Ok(o.register_participant(req)?)).await?;
    tracing::info!(%participant, "participant registered");
    Ok(Json(ParticipantCreated { participant }))
}

async fn submit_test(State(s): State<Shared>, body: Bytes) -> Result<Json<SubmitOutcome>, Failure> {
    let sub: SuiteSubmission = parse(&body)?;
    let outcome = with_orch(&s, move |o| Ok(o.submit_test(sub)?)).await?;
    tracing::info!(test = %outcome.id(), "suite submitted");
    Ok(Json(outcome))
}

async fn submit_review(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<StatusCode, Failure> {
    let test: TestId = parse_id(&id, "test id")?;
    let sub: ReviewSubmission = parse(&body)?;
    if sub.body.test_id != test {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "BadRequest", "body names another suite"));
    }
    with_orch(&s, move |o| Ok(o.submit_review(sub.reviewer, sub.body, sub.signature)?)).await?;
    tracing::info!(%test, "review accepted");
    Ok(StatusCode::NO_CONTENT)
}

/// Received reviews are visible to other reviewers.
async fn list_reviews(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Vec<Review>>, Failure> {
    let test: TestId = parse_id(&id, "test id")?;
    with_orch(&s, move |o| {
        o.state().suite(&test)?;
        Ok(Json(o.state().reviews.get(&test).cloned().unwrap_or_default()))
    })
    .await
}

async fn bundle(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<BundleFiles>, Failure> {
    let test: TestId = parse_id(&id, "test id")?;
    with_orch(&s, move |o| Ok(Json(BundleFiles::encode(test, o.bundle(&test)?)))).await
}

async fn register_model(State(s): State<Shared>, body: Bytes) -> Result<Json<ModelCreated>, Failure> {
    let reg: ModelRegistration = parse(&body)?;
    let model = with_orch(&s, move |o| Ok(o.register_model(reg)?)).await?;
    tracing::info!(%model, "model registered");
    Ok(Json(ModelCreated { model }))
}

async fn join_cohort(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CohortJoined>, Failure> {
    let model: ModelId = parse_id(&id, "model id")?;
    let req: CohortJoin = parse(&body)?;
    let cohort = with_orch(&s, move |o| Ok(o.join_cohort(model, req.stream, req.signature)?)).await?;
    Ok(Json(CohortJoined { cohort }))
}

async fn leaderboard(State(s): State<Shared>, Path(kind): Path<String>) -> Result<Json<BoardResponse>, Failure> {
    let export = with_orch(&s, |o| {
        Ok(o.leaderboards().cloned().unwrap_or_else(|| {
            let st = o.state();
            LeaderboardExport::new(st.head, st.build_leaderboards())
        }))
    })
    .await?;
    let export_hash = export.hash();
    let b = export.boards;
    let board = match kind.as_str() {
        "contributors" => Board::Contributors(b.contributors),
        "reviewers" => Board::Reviewers(b.reviewers),
        "models" => Board::Models(ModelBoards {
            streams: b.models,
            cross_stream: b.models_cross_stream,
        }),
        _ => {
            return Err(Failure::new(
                StatusCode::NOT_FOUND,
                "UnknownBoard",
                "board must be contributors, reviewers or models",
            ))
        }
    };
    Ok(Json(BoardResponse {
        generated_at: export.generated_at,
        export_hash,
        board,
    }))
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    #[serde(default)]
    from: u64,
}

/// Log lines from `from` on, in the same text form as the log file.
async fn audit(State(s): State<Shared>, Query(q): Query<AuditQuery>) -> Result<Response, Failure> {
    let text: String = with_orch(&s, move |o| {
        Ok(o.audit().snapshot_from(q.from).iter().map(|r| r.to_line() + "\n").collect())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn reveal(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RevealQuery>,
) -> Result<Response, Failure> {
    let assignment: AssignmentId = parse_id(&id, "assignment id")?;
    let view = with_orch(&s, move |o| {
        let test_id = o
            .state()
            .assignments
            .keys()
            .find(|t| AssignmentId::for_test(t) == assignment)
            .copied()
            .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, "UnknownAssignment", "no such assignment"))?;
        let req = RevealRequestBody {
            test_id,
            reviewer: q.reviewer,
        };
        Ok(o.reveal(req, q.signature)?)
    })
    .await?;
    let images = tokio::task::spawn_blocking(move || {
        let images = view.render().iter().map(|p| encode_png(p)).collect();
        RevealResponse {
            test_id: view.test_id,
            watermark: view.watermark(),
            served_at: view.served_at,
            item_count: view.item_count,
            images,
        }
    })
    .await
    .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    let mut resp = Json(images).into_response();
    let h = resp.headers_mut();
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store, private"));
    h.insert(header::PRAGMA, HeaderValue::from_static("no-cache"));
    Ok(resp)
}

async fn review_queue(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Vec<ReviewTask>>, Failure> {
    let reviewer: ParticipantId = parse_id(&id, "participant id")?;
    with_orch(&s, move |o| Ok(Json(o.review_queue(&reviewer)))).await
}

/// Advances the logical clock by one tick every `period` and applies the
/// recommended resolution to open misconduct cases.
pub async fn run_clock(shared: Shared, period: Duration) {
    let mut interval = tokio::time::interval(period);
    interval.tick().await;
    loop {
        interval.tick().await;
        let result = with_orch(&shared, |o| {
            let next = o.now() + 1;
            o.advance_clock(next)?;
            Ok(o.resolve_pending_cases()?)
        })
        .await;
        match result {
            Ok(resolved) if !resolved.is_empty() => tracing::info!(cases = resolved.len(), "cases resolved"),
            Ok(_) => {}
            Err(e) => tracing::error!(error = %e.body.message, "clock tick failed"),
        }
    }
}

/// Serves the API on `listener` until the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, shared: Shared, tick: Option<Duration>) -> std::io::Result<()> {
    if let Some(period) = tick {
        tokio::spawn(run_clock(Arc::clone(&shared), period));
    }
    axum::serve(listener, router(shared)).await
}
