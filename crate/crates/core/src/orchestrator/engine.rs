//! The single writer: turns requests into events, applies them to
//! [`State`] and appends them to the signed audit log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use super::endpoint::{evaluate_model, Connector, Evaluation, ModelEndpoint, Pacer, RealSleeper, Sleeper};
use super::event::{
    CaseKind, Event, InvalidationReason, MisconductCase, ModelRegistrationBody, RegistrationBody,
    RemovalReason, Resolution, RetirementReason, RevealRequestBody, ScoreCheckBody,
    SubmissionBody,
};
use super::replay::replay;
use super::reveal::{RevealView, RevealedItem};
use super::state::{SlotStatus, State};
use super::{inconsistent, OrchestratorError as E};
use crate::canonical::{self, SchemaHeader, SCHEMA_VERSION};
use crate::domain::{
    response_hash, run_scorer, validate_test_suite, AssignmentId, CohortId, EvalAnnotation,
    EvalMode, Lane, ModelId, ParticipantId, Review, ReviewBody, Role, ScoreRecord, Stamp,
    StreamId, SuitePayload, SuiteState, TestId, VerifiedCredential,
};
use crate::integrity::{
    draw_reveal_subset, verify_canonical, verify_reveal, AuditLog,
    AuditReader, BeaconSchedule, Digest, PublicKey, Salt, Signature, Signer, SigningIdentity,
};
use crate::reservoir::{
    build_bundle, earliest_open_window, route_lane, CohortError, PublicationBundle,
    PublicationInput, PublishError, PublishedReview, WindowState,
};
use crate::scoring::{stats::spearman, LeaderboardExport};

const AUDIT_FILE: &str = "audit.log";
const SEALED_FILE: &str = "sealed.json";
const BUNDLE_DIR: &str = "bundles";
/// Suites with at least this many finalized ratings at or below
/// `SPAM_QUALITY` open a spam case against their contributor.
const SPAM_SUITES: usize = 2;
const SPAM_QUALITY: f64 = -0.5;
const MAX_EVAL_THREADS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRequest {
    pub body: RegistrationBody,
    /// Signature over `body` by the key being registered.
    pub proof: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSubmission {
    pub contributor: ParticipantId,
    pub body: SubmissionBody,
    pub signature: Signature,
    /// Sealed with the server until publication.
    pub payload: SuitePayload,
    pub salt: Salt,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistration {
    pub creator: ParticipantId,
    /// Carries the redacted endpoint; this is what the creator signs.
    pub body: ModelRegistrationBody,
    pub signature: Signature,
    pub auth_token: String,
}

impl fmt::Debug for ModelRegistration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistration")
            .field("creator", &self.creator)
            .field("body", &self.body)
            .field("auth_token", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SubmitOutcome {
    Admitted { id: TestId, lane: Lane },
    Queued { id: TestId },
    Invalidated { id: TestId, reasons: Vec<String> },
}

impl SubmitOutcome {
    pub fn id(&self) -> TestId {
        match self {
            SubmitOutcome::Admitted { id, .. }
            | SubmitOutcome::Queued { id }
            | SubmitOutcome::Invalidated { id, .. } => *id,
        }
    }
}

/// A pending review slot as shown to its reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub assignment: AssignmentId,
    pub test_id: TestId,
    pub stream: StreamId,
    pub item_count: u32,
    pub deadline: u64,
}

/// Governance decision on a misconduct case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// The default policy for the case kind.
    Recommended,
    Dismiss,
    Slash { amount: u64, remove: bool },
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub common_models: usize,
    pub spearman: Option<f64>,
    /// `1 - spearman`; 0 for identical rankings, 2 for reversed ones.
    pub divergence: Option<f64>,
}

/// Rank disagreement between internal scores and an external benchmark
/// over the models both rate.
pub fn divergence(
    internal: &BTreeMap<ModelId, f64>,
    external: &BTreeMap<ModelId, f64>,
) -> DivergenceReport {
    let (xs, ys): (Vec<f64>, Vec<f64>) = internal
        .iter()
        .filter_map(|(m, x)| external.get(m).map(|y| (*x, *y)))
        .unzip();
    let rho = if xs.len() >= 2 { spearman(&xs, &ys) } else { None };
    DivergenceReport {
        common_models: xs.len(),
        spearman: rho,
        divergence: rho.map(|r| 1.0 - r),
    }
}

/// Server-private material: suite payloads and salts, raw model responses
/// and endpoint tokens. Never logged.
#[derive(Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SealedStore {
    pub payloads: BTreeMap<TestId, (SuitePayload, Salt)>,
    pub responses: BTreeMap<TestId, BTreeMap<ModelId, Vec<String>>>,
    pub tokens: BTreeMap<ModelId, String>,
}

impl fmt::Debug for SealedStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SealedStore")
            .field("payloads", &self.payloads.len())
            .field("responses", &self.responses.len())
            .field("tokens", &self.tokens.len())
            .finish()
    }
}

pub struct Orchestrator {
    state: State,
    log: AuditLog,
    server: SigningIdentity,
    beacon: BeaconSchedule,
    sealed: SealedStore,
    bundles: BTreeMap<TestId, PublicationBundle>,
    connector: Arc<dyn Connector>,
    endpoints: BTreeMap<ModelId, Arc<dyn ModelEndpoint>>,
    sleeper: Arc<dyn Sleeper>,
    parallel: bool,
    data_dir: Option<PathBuf>,
}

impl fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Orchestrator")
            .field("now", &self.state.now)
            .field("log_len", &self.log.len())
            .field("server_key", &self.server.public_key())
            .field("sealed", &self.sealed)
            .finish_non_exhaustive()
    }
}

fn audit_err(e: impl fmt::Display) -> E {
    E::Audit(e.to_string())
}

impl Orchestrator {
    /// Starts a fresh protocol instance with an in-memory log.
    pub fn new(
        config: ProtocolConfig,
        server: SigningIdentity,
        beacon_master: [u8; 32],
        connector: Arc<dyn Connector>,
    ) -> Result<Self, E> {
        Self::start(config, server, beacon_master, connector, AuditLog::new(), None)
    }

    /// Opens a protocol instance persisted in `dir`, creating it when the
    /// directory holds no audit log yet. An existing log is replayed and
    /// must have been written by the same server key and config.
    pub fn open(
        dir: &Path,
        config: ProtocolConfig,
        server: SigningIdentity,
        beacon_master: [u8; 32],
        connector: Arc<dyn Connector>,
    ) -> Result<Self, E> {
        fs::create_dir_all(dir.join(BUNDLE_DIR)).map_err(audit_err)?;
        let log = AuditLog::open_file(&dir.join(AUDIT_FILE)).map_err(audit_err)?;
        let existing = log.snapshot();
        if existing.is_empty() {
            return Self::start(config, server, beacon_master, connector, log, Some(dir.to_path_buf()));
        }
        let report = replay(&existing)?;
        let state = report.state;
        if state.server_key != server.public_key() {
            return Err(E::Replay("log was written by another server key".into()));
        }
        if state.config != config {
            return Err(E::Replay("config differs from the logged genesis".into()));
        }
        let beacon = BeaconSchedule::new(beacon_master);
        if state.beacon_seeds.iter().any(|(r, s)| beacon.seed_for_round(*r) != *s) {
            return Err(E::Replay("beacon master does not match the logged seeds".into()));
        }
        let sealed = match fs::read(dir.join(SEALED_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(audit_err)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => SealedStore::default(),
            Err(e) => return Err(audit_err(e)),
        };
        let mut bundles = BTreeMap::new();
        for (id, s) in &state.suites {
            if s.state == SuiteState::Published {
                let b = PublicationBundle::read_dir(&dir.join(BUNDLE_DIR).join(id.to_hex())).map_err(audit_err)?;
                bundles.insert(*id, b);
            }
        }
        Ok(Self {
            state,
            log,
            server,
            beacon,
            sealed,
            bundles,
            connector,
            endpoints: BTreeMap::new(),
            sleeper: Arc::new(RealSleeper::default()),
            parallel: true,
            data_dir: Some(dir.to_path_buf()),
        })
    }

    fn start(
        config: ProtocolConfig,
        server: SigningIdentity,
        beacon_master: [u8; 32],
        connector: Arc<dyn Connector>,
        mut log: AuditLog,
        data_dir: Option<PathBuf>,
    ) -> Result<Self, E> {
        config.validate()?;
        let beacon = BeaconSchedule::new(beacon_master);
        let genesis = Event::Genesis {
            schema: SchemaHeader::default(),
            config_hash: config.hash(),
            config,
            server_key: server.public_key(),
            beacon_commitment: beacon.commitment_for_round(0),
        };
        let state = State::genesis(Stamp::new(0, 0), &genesis)?;
        log.append(genesis.kind(), canonical::to_bytes(&genesis), Signer::Server, &server)
            .map_err(audit_err)?;
        let mut orch = Self {
            state,
            log,
            server,
            beacon,
            sealed: SealedStore::default(),
            bundles: BTreeMap::new(),
            connector,
            endpoints: BTreeMap::new(),
            sleeper: Arc::new(RealSleeper::default()),
            parallel: true,
            data_dir,
        };
        orch.command(|o| o.reveal_beacons())?;
        Ok(orch)
    }

    /// Replaces the time source used for pacing and retry backoff.
    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Evaluates models on worker threads (the default) or inline.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    // ---- read access ---------------------------------------------------

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.state.config
    }

    pub fn now(&self) -> u64 {
        self.state.now
    }

    pub fn server_key(&self) -> PublicKey {
        self.server.public_key()
    }

    pub fn audit(&self) -> AuditReader {
        self.log.reader()
    }

    pub fn audit_text(&self) -> String {
        self.log.to_text()
    }

    pub fn audit_len(&self) -> u64 {
        self.log.len()
    }

    /// Hash of the newest audit entry.
    pub fn audit_head(&self) -> Digest {
        self.log.head_hash()
    }

    pub fn leaderboards(&self) -> Option<&LeaderboardExport> {
        self.state.last_export.as_ref()
    }

    pub fn sealed(&self) -> &SealedStore {
        &self.sealed
    }

    pub fn bundle(&self, id: &TestId) -> Result<&PublicationBundle, E> {
        self.state.suite(id)?;
        self.bundles.get(id).ok_or(E::NotPublished(*id))
    }

    pub fn review_queue(&self, reviewer: &ParticipantId) -> Vec<ReviewTask> {
        self.state
            .assignments
            .iter()
            .filter_map(|(t, a)| {
                let slot = a.slots.get(reviewer)?;
                if slot.status != SlotStatus::Pending || self.state.now > slot.deadline {
                    return None;
                }
                let s = &self.state.suites[t];
                Some(ReviewTask {
                    assignment: AssignmentId::for_test(t),
                    test_id: *t,
                    stream: s.stream,
                    item_count: s.item_count,
                    deadline: slot.deadline,
                })
            })
            .collect()
    }

    /// Current scores of ranked models on a stream against an external
    /// benchmark.
    pub fn cross_validate(&self, stream: &StreamId, external: &BTreeMap<ModelId, f64>) -> DivergenceReport {
        let internal = self
            .state
            .stream_models(stream)
            .into_iter()
            .filter_map(|m| self.state.model_score_on(&m, stream).value().map(|v| (m, v)))
            .collect();
        divergence(&internal, external)
    }

    // ---- event plumbing --------------------------------------------------

    fn emit(&mut self, event: Event) -> Result<u64, E> {
        let seq = self.log.len();
        let tick = match &event {
            Event::ClockAdvanced { tick } => *tick,
            _ => self.state.now,
        };
        self.state.apply(Stamp::new(tick, seq), &event)?;
        self.log
            .append(event.kind(), canonical::to_bytes(&event), Signer::Server, &self.server)
            .map_err(audit_err)?;
        Ok(seq)
    }

    fn next_stamp(&self) -> Stamp {
        Stamp::new(self.state.now, self.log.len())
    }

    /// Runs a mutating command, then rebuilds the boards and persists the
    /// sealed store whether or not the command succeeded, since a failing
    /// command may already have emitted events.
    fn command<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, E>) -> Result<T, E> {
        let out = f(self);
        let boards = self.rebuild_boards();
        let saved = self.persist();
        let v = out?;
        boards?;
        saved?;
        Ok(v)
    }

    fn rebuild_boards(&mut self) -> Result<(), E> {
        let boards = self.state.build_leaderboards();
        if self.state.last_export.as_ref().is_some_and(|e| e.boards == boards) {
            return Ok(());
        }
        let hash = LeaderboardExport::new(self.next_stamp(), boards).hash();
        self.emit(Event::LeaderboardsRebuilt { hash })?;
        Ok(())
    }

    fn persist(&self) -> Result<(), E> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let bytes = serde_json::to_vec(&self.sealed).map_err(audit_err)?;
        write_private(&dir.join(SEALED_FILE), &bytes).map_err(audit_err)
    }

    fn reveal_beacons(&mut self) -> Result<(), E> {
        let target = self.state.current_round();
        while self.state.beacon_round.is_none_or(|r| r < target) {
            let round = self.state.beacon_round.map_or(0, |r| r + 1);
            self.emit(Event::BeaconRevealed {
                round,
                seed: self.beacon.seed_for_round(round),
                next_commitment: self.beacon.commitment_for_round(round + 1),
            })?;
        }
        Ok(())
    }

    // ---- participants ----------------------------------------------------

    pub fn register_participant(&mut self, req: RegistrationRequest) -> Result<ParticipantId, E> {
        self.command(|o| {
            let id = ParticipantId::for_key(&req.body.public_key);
            let credentials = req
                .body
                .credentials
                .iter()
                .map(|c| VerifiedCredential {
                    kind: c.kind,
                    evidence_hash: c.evidence_hash,
                    bonus_points: o.state.config.bonus.points(c.kind),
                })
                .collect();
            o.emit(Event::ParticipantRegistered {
                id,
                role: req.body.role,
                public_key: req.body.public_key,
                credentials,
                stake: req.body.stake,
                proof: req.proof,
            })?;
            Ok(id)
        })
    }

    // ---- suites ----------------------------------------------------------

    pub fn submit_test(&mut self, sub: SuiteSubmission) -> Result<SubmitOutcome, E> {
        self.command(|o| o.submit_inner(sub))
    }

    fn submit_inner(&mut self, sub: SuiteSubmission) -> Result<SubmitOutcome, E> {
        let id = TestId::for_commitment(&sub.contributor, &sub.body.digest);
        let committed = self.emit(Event::SuiteCommitted {
            id,
            contributor: sub.contributor,
            body: sub.body.clone(),
            signature: sub.signature,
        })?;

        if !verify_reveal(&sub.body.digest, &sub.payload.canonical_bytes(), &sub.salt) {
            let seq = self.emit(Event::SuiteInvalidated {
                id,
                reason: InvalidationReason::CommitMismatch,
            })?;
            self.open_case_inner(sub.contributor, CaseKind::CommitMismatch, vec![committed, seq])?;
            return Ok(SubmitOutcome::Invalidated {
                id,
                reasons: vec!["payload does not open the commitment".into()],
            });
        }
        let mut reasons = validate_test_suite(&sub.payload, self.state.config.max_items).messages();
        if sub.payload.items.len() != sub.body.item_count as usize {
            reasons.push(format!(
                "declared {} items, payload has {}",
                sub.body.item_count,
                sub.payload.items.len()
            ));
        }
        if sub.body.schema_version != SCHEMA_VERSION {
            reasons.push(format!("unsupported schema version {}", sub.body.schema_version));
        }
        if !reasons.is_empty() {
            self.emit(Event::SuiteInvalidated {
                id,
                reason: InvalidationReason::Validation(reasons.clone()),
            })?;
            return Ok(SubmitOutcome::Invalidated { id, reasons });
        }

        self.sealed.payloads.insert(id, (sub.payload, sub.salt));
        match self.try_admit(id)? {
            Some(lane) => Ok(SubmitOutcome::Admitted { id, lane }),
            None => {
                self.emit(Event::SuiteQueued { id })?;
                Ok(SubmitOutcome::Queued { id })
            }
        }
    }

    /// Admits a committed suite, retiring the oldest eligible suite first
    /// when the reservoir is full. Returns `None` when nothing can retire.
    fn try_admit(&mut self, id: TestId) -> Result<Option<Lane>, E> {
        let stream = self.state.suite(&id)?.stream;
        if self.state.streams[&stream].reservoir.is_full() {
            let st = &self.state.streams[&stream];
            let weights = self.state.stream_weights(&stream);
            let Some(victim) = st
                .reservoir
                .retirement_candidate(&weights, |t| self.state.retirement_eligible(t))
            else {
                return Ok(None);
            };
            self.emit(Event::SuiteRetired {
                id: victim,
                reason: RetirementReason::CapacityPressure,
            })?;
            self.publish(victim)?;
        }
        let (round, beacon) = self.state.beacon().ok_or_else(|| inconsistent("no beacon"))?;
        let mut draw = beacon.derive(&[b"route".as_slice(), id.as_bytes()].concat());
        let cfg = &self.state.config;
        let hold_cap = (cfg.max_hold_share * cfg.capacity as f64).floor() as usize;
        let mut lane = route_lane(draw.next_unit(round), cfg.hold_fraction);
        if lane == Lane::CohortHold && self.state.streams[&stream].hold_pool.len() >= hold_cap {
            lane = Lane::Immediate;
        }
        self.emit(Event::SuiteAdmitted { id, lane, round })?;
        if lane == Lane::Immediate {
            self.evaluate_missing(id)?;
            self.assign_reviewers(id)?;
        }
        Ok(Some(lane))
    }

    /// Immediate-mode evaluation of every active stream model that has no
    /// record for `test` yet.
    fn evaluate_missing(&mut self, test: TestId) -> Result<(), E> {
        let pairs = self.state.missing_evaluations(&test).into_iter().map(|m| (m, test)).collect();
        self.evaluate_pairs(pairs, None)
    }

    fn assign_reviewers(&mut self, test: TestId) -> Result<(), E> {
        let s = self.state.suite(&test)?;
        if s.state != SuiteState::Live || self.state.is_held(&test) || self.state.consensus.contains_key(&test) {
            return Ok(());
        }
        let reviewers = self.state.reviewer_draw(&test);
        if reviewers.is_empty() {
            return Ok(());
        }
        let round = self.state.beacon_round.ok_or_else(|| inconsistent("no beacon"))?;
        self.emit(Event::ReviewersAssigned {
            test_id: test,
            reviewers,
            deadline: self.state.now + self.state.config.deadline_ticks(),
            round,
        })?;
        Ok(())
    }

    // ---- models ----------------------------------------------------------

    pub fn register_model(&mut self, reg: ModelRegistration) -> Result<ModelId, E> {
        self.command(|o| {
            let mut full = reg.body.endpoint.clone();
            full.auth_token = reg.auth_token.clone();
            full.validate().map_err(E::EndpointValidationFailed)?;
            let endpoint = o.connector.connect(&full).map_err(E::EndpointValidationFailed)?;
            endpoint.probe().map_err(E::EndpointValidationFailed)?;
            let id = ModelId::assign(&reg.creator, reg.body.nonce);
            o.emit(Event::ModelRegistered {
                id,
                creator: reg.creator,
                body: reg.body.clone(),
                signature: reg.signature,
            })?;
            if !reg.auth_token.is_empty() {
                o.sealed.tokens.insert(id, reg.auth_token.clone());
            }
            o.endpoints.insert(id, endpoint);
            let pairs = o
                .state
                .streams
                .values()
                .filter(|st| reg.body.streams.contains(&st.id))
                .flat_map(|st| st.reservoir.live.iter())
                .filter(|e| e.lane == Lane::Immediate)
                .map(|e| (id, e.test_id))
                .collect();
            o.evaluate_pairs(pairs, None)?;
            Ok(id)
        })
    }

    /// Enrolls a model in the earliest open cohort window of `stream`.
    pub fn join_cohort(&mut self, model: ModelId, stream: StreamId, signature: Signature) -> Result<CohortId, E> {
        self.command(|o| {
            let now = o.state.now;
            if earliest_open_window(&o.state.stream(&stream)?.windows, now).is_none() {
                o.schedule_windows(stream)?;
            }
            let st = o.state.stream(&stream)?;
            let i = earliest_open_window(&st.windows, now).ok_or(CohortError::NotOpen)?;
            let cohort = st.windows[i].id;
            o.emit(Event::CohortJoined {
                model,
                stream,
                cohort,
                signature,
            })?;
            Ok(cohort)
        })
    }

    fn endpoint_for(&mut self, model: &ModelId) -> Option<Arc<dyn ModelEndpoint>> {
        if let Some(e) = self.endpoints.get(model) {
            return Some(Arc::clone(e));
        }
        let mut desc = self.state.models.get(model)?.record.endpoint.clone();
        desc.auth_token = self.sealed.tokens.get(model).cloned().unwrap_or_default();
        let e = self.connector.connect(&desc).ok()?;
        self.endpoints.insert(*model, Arc::clone(&e));
        Some(e)
    }

    /// Queries and records every `(model, suite)` pair that has no record
    /// yet. Queries may run concurrently; records are emitted in pair order.
    fn evaluate_pairs(&mut self, pairs: Vec<(ModelId, TestId)>, cohort: Option<CohortId>) -> Result<(), E> {
        let mut seen = BTreeSet::new();
        let pairs: Vec<_> = pairs
            .into_iter()
            .filter(|p| !self.state.records.contains_key(p) && seen.insert(*p))
            .collect();
        if pairs.is_empty() {
            return Ok(());
        }
        let mut by_model: BTreeMap<ModelId, Vec<TestId>> = BTreeMap::new();
        for (m, t) in &pairs {
            by_model.entry(*m).or_default().push(*t);
        }
        let mut jobs = Vec::with_capacity(by_model.len());
        for (m, tests) in by_model {
            let endpoint = self.endpoint_for(&m);
            jobs.push((m, tests, endpoint));
        }
        let results = self.run_jobs(&jobs)?;
        for (m, t) in pairs {
            let ev = results.get(&(m, t)).ok_or_else(|| inconsistent("missing evaluation"))?.clone();
            let record = ScoreRecord {
                test_id: t,
                model_id: m,
                aggregate: crate::domain::mean_item_score(&ev.item_scores),
                item_scores: ev.item_scores,
                mode: if cohort.is_some() { EvalMode::Cohort } else { EvalMode::Immediate },
                cohort,
                evaluated_at: self.next_stamp(),
                response_hash: response_hash(&ev.responses),
                annotation: ev.annotation,
            };
            self.emit(Event::ScoreRecorded { record })?;
            self.sealed.responses.entry(t).or_default().insert(m, ev.responses);
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn run_jobs(
        &self,
        jobs: &[(ModelId, Vec<TestId>, Option<Arc<dyn ModelEndpoint>>)],
    ) -> Result<BTreeMap<(ModelId, TestId), Evaluation>, E> {
        for (_, tests, _) in jobs {
            if let Some(t) = tests.iter().find(|t| !self.sealed.payloads.contains_key(t)) {
                return Err(inconsistent(format!("no sealed payload for suite {t}")));
            }
        }
        let run = |job: &(ModelId, Vec<TestId>, Option<Arc<dyn ModelEndpoint>>)| {
            let (m, tests, endpoint) = job;
            let desc = &self.state.models[m].record.endpoint;
            let mut pacer = Pacer::new(desc.max_qps);
            tests
                .iter()
                .map(|t| {
                    let payload = &self.sealed.payloads[t].0;
                    let ev = match endpoint {
                        Some(e) => evaluate_model(
                            e.as_ref(),
                            desc,
                            payload,
                            &self.state.config.retry,
                            &mut pacer,
                            self.sleeper.as_ref(),
                        ),
                        None => Evaluation {
                            item_scores: vec![0.0; payload.items.len()],
                            responses: vec![String::new(); payload.items.len()],
                            annotation: Some(EvalAnnotation::Unreachable {
                                failed_items: payload.items.len() as u32,
                            }),
                        },
                    };
                    ((*m, *t), ev)
                })
                .collect::<Vec<_>>()
        };
        if !self.parallel || jobs.len() == 1 {
            return Ok(jobs.iter().flat_map(run).collect());
        }
        let workers = jobs.len().min(MAX_EVAL_THREADS);
        let out = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    scope.spawn(move || {
                        jobs.iter()
                            .skip(w)
                            .step_by(workers)
                            .flat_map(run)
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        Ok(out)
    }

    // ---- reviews ---------------------------------------------------------

    /// Serves the beacon-selected item subset to an assigned reviewer. The
    /// request must be signed by the reviewer.
    pub fn reveal(&mut self, req: RevealRequestBody, signature: Signature) -> Result<RevealView, E> {
        self.command(|o| {
            let p = o.state.active_with_role(&req.reviewer, Role::Reviewer)?;
            if !verify_canonical(&p.public_key, &req, &signature) {
                return Err(E::BadSignature);
            }
            let s = o.state.suite(&req.test_id)?;
            let item_count = s.item_count;
            let (round, beacon) = o.state.beacon().ok_or_else(|| inconsistent("no beacon"))?;
            let items: Vec<u32> = draw_reveal_subset(
                &beacon,
                round,
                req.test_id.as_bytes(),
                item_count as usize,
                o.state.config.reveal_fraction,
            )
            .into_iter()
            .map(|i| i as u32)
            .collect();
            o.emit(Event::RevealServed {
                test_id: req.test_id,
                reviewer: req.reviewer,
                round,
                items: items.clone(),
            })?;
            let payload = &o
                .sealed
                .payloads
                .get(&req.test_id)
                .ok_or_else(|| inconsistent("no sealed payload"))?
                .0;
            Ok(RevealView {
                test_id: req.test_id,
                reviewer: req.reviewer,
                round,
                served_at: o.state.now,
                item_count,
                items: items
                    .iter()
                    .map(|&i| {
                        let it = &payload.items[i as usize];
                        RevealedItem {
                            index: i,
                            prompt: it.prompt.clone(),
                            reference_answer: it.reference_answer.clone(),
                            scorer: it.scorer.clone(),
                        }
                    })
                    .collect(),
            })
        })
    }

    pub fn submit_review(&mut self, reviewer: ParticipantId, body: ReviewBody, signature: Signature) -> Result<(), E> {
        self.command(|o| {
            let review = Review {
                test_id: body.test_id,
                reviewer,
                rating: body.rating,
                rationale: body.rationale,
                signature,
                submitted_at: o.next_stamp(),
            };
            let test = review.test_id;
            o.emit(Event::ReviewSubmitted { review })?;
            let submitted = o.state.assignments[&test].count(SlotStatus::Submitted);
            if submitted >= o.state.config.min_reviews {
                o.finalize(test)?;
            }
            Ok(())
        })
    }

    fn finalize(&mut self, test: TestId) -> Result<(), E> {
        let st = &self.state;
        let reviews: Vec<_> = st.reviews[&test]
            .iter()
            .map(|r| (r.reviewer, r.rating, st.ledger.reviewer_rep(&r.reviewer)))
            .collect();
        let pairs: Vec<_> = reviews.iter().map(|(_, r, rho)| (*r, *rho)).collect();
        let q_bar = crate::scoring::weighted_quality(&pairs, st.config.weight_floor);
        self.emit(Event::QualityFinalized {
            test_id: test,
            reviews: reviews.clone(),
            q_bar,
        })?;

        let contributor = self.state.suites[&test].contributor;
        let rho = self.state.ledger.contributor_rep(&contributor);
        self.emit(Event::WeightAssigned {
            test_id: test,
            contributor_reputation: rho,
            weight: crate::scoring::test_weight(q_bar, rho),
        })?;

        let reviewer_reps = reviews
            .iter()
            .map(|(r, _, _)| (*r, self.state.reviewer_reputation(r)))
            .collect();
        self.emit(Event::ReputationsRefreshed {
            test_id: test,
            contributor: (contributor, self.state.contributor_reputation(&contributor)),
            reviewers: reviewer_reps,
        })?;

        self.check_spam(contributor)?;
        let mut touched = vec![contributor];
        touched.extend(reviews.iter().map(|(r, _, _)| *r));
        self.remove_below_threshold(&touched)?;
        let stream = self.state.suites[&test].stream;
        self.retire_zero_weight(stream)?;
        self.drain_pending(stream)
    }

    fn check_spam(&mut self, contributor: ParticipantId) -> Result<(), E> {
        if self.state.open_case(&contributor, CaseKind::SpamPattern).is_some() {
            return Ok(());
        }
        let evidence: Vec<u64> = self
            .state
            .suites
            .values()
            .filter(|s| s.contributor == contributor && s.quality.is_some_and(|q| q <= SPAM_QUALITY))
            .map(|s| s.submitted_at.seq)
            .collect();
        let already = self.state.cases.values().any(|c| {
            c.subject == contributor && c.kind == CaseKind::SpamPattern && c.evidence == evidence
        });
        if evidence.len() >= SPAM_SUITES && !already {
            self.open_case_inner(contributor, CaseKind::SpamPattern, evidence)?;
        }
        Ok(())
    }

    fn remove_below_threshold(&mut self, ids: &[ParticipantId]) -> Result<(), E> {
        for id in ids {
            if self.state.below_threshold(id) {
                self.emit(Event::ParticipantRemoved {
                    id: *id,
                    reason: RemovalReason::BelowThreshold,
                })?;
            }
        }
        Ok(())
    }

    // ---- retirement and publication ----------------------------------------

    fn retire_zero_weight(&mut self, stream: StreamId) -> Result<(), E> {
        let victims: Vec<TestId> = self.state.streams[&stream]
            .reservoir
            .live
            .iter()
            .map(|e| e.test_id)
            .filter(|t| self.state.suites[t].weight == Some(0.0) && self.state.retirement_eligible(t))
            .collect();
        for id in victims {
            self.emit(Event::SuiteRetired {
                id,
                reason: RetirementReason::ZeroWeight,
            })?;
            self.publish(id)?;
        }
        Ok(())
    }

    /// Admits queued suites while room can be made.
    fn drain_pending(&mut self, stream: StreamId) -> Result<(), E> {
        while let Some(&id) = self.state.streams[&stream].pending.first() {
            if self.try_admit(id)?.is_none() {
                break;
            }
        }
        Ok(())
    }

    fn publish(&mut self, id: TestId) -> Result<(), E> {
        let suite = self.state.suite(&id)?.clone();
        let (payload, salt) = self
            .sealed
            .payloads
            .get(&id)
            .cloned()
            .ok_or_else(|| inconsistent("no sealed payload"))?;
        let records: Vec<ScoreRecord> = self
            .state
            .records
            .values()
            .filter(|r| r.test_id == id)
            .cloned()
            .collect();
        let reviews = self
            .state
            .reviews
            .get(&id)
            .map_or(&[][..], |v| v)
            .iter()
            .map(|r| PublishedReview {
                review: r.clone(),
                reviewer_key: self.state.participants[&r.reviewer].public_key,
            })
            .collect();
        let input = PublicationInput {
            suite: &suite,
            payload: &payload,
            salt,
            reviews,
            records,
            responses: self.sealed.responses.get(&id).cloned().unwrap_or_default(),
            expected_models: self.state.stream_models(&suite.stream).into_iter().collect(),
            published_at: self.next_stamp(),
        };
        let bundle = match build_bundle(input, &self.server) {
            Ok(b) => b,
            Err(PublishError::CommitMismatch) => {
                let seq = self.emit(Event::SuiteInvalidated {
                    id,
                    reason: InvalidationReason::CommitMismatch,
                })?;
                self.open_case_inner(suite.contributor, CaseKind::CommitMismatch, vec![suite.submitted_at.seq, seq])?;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        self.emit(Event::SuitePublished {
            id,
            bundle_hash: bundle.hash(),
        })?;
        if let Some(dir) = &self.data_dir {
            bundle
                .write_dir(&dir.join(BUNDLE_DIR).join(id.to_hex()))
                .map_err(audit_err)?;
        }
        self.bundles.insert(id, bundle);
        Ok(())
    }

    // ---- clock -----------------------------------------------------------

    /// Moves the clock to `tick` and runs everything that became due.
    pub fn advance_clock(&mut self, tick: u64) -> Result<(), E> {
        self.command(|o| {
            if tick < o.state.now {
                return Err(E::ClockRewind { now: o.state.now, to: tick });
            }
            let old_round = o.state.current_round();
            if tick > o.state.now {
                o.emit(Event::ClockAdvanced { tick })?;
            }
            o.reveal_beacons()?;
            o.sweep(o.state.current_round() > old_round)
        })
    }

    pub fn advance_days(&mut self, days: u64) -> Result<(), E> {
        let tpd = self.state.config.ticks_per_day;
        self.advance_clock(self.state.now + days * tpd)
    }

    fn sweep(&mut self, new_day: bool) -> Result<(), E> {
        self.lapse_reviews()?;
        let streams: Vec<StreamId> = self.state.streams.keys().copied().collect();
        for &stream in &streams {
            self.close_due_windows(stream)?;
            if self.state.streams[&stream].windows.iter().all(|w| w.state != WindowState::Open) {
                self.schedule_windows(stream)?;
            }
            self.retire_zero_weight(stream)?;
            self.drain_pending(stream)?;
        }
        let unreviewed: Vec<TestId> = self
            .state
            .suites
            .values()
            .filter(|s| s.state == SuiteState::Live && !self.state.consensus.contains_key(&s.id))
            .map(|s| s.id)
            .collect();
        for t in unreviewed {
            self.assign_reviewers(t)?;
        }
        let converging: Vec<ModelId> = self
            .state
            .models
            .keys()
            .filter(|m| self.state.convergence_due(m))
            .copied()
            .collect();
        for id in converging {
            self.emit(Event::ModelConverged { id })?;
        }
        let everyone: Vec<ParticipantId> = self.state.participants.keys().copied().collect();
        self.remove_below_threshold(&everyone)?;
        if new_day {
            let payouts = self.state.reward_payouts();
            if !payouts.is_empty() {
                self.emit(Event::RewardsDistributed { payouts })?;
            }
        }
        Ok(())
    }

    fn lapse_reviews(&mut self) -> Result<(), E> {
        let now = self.state.now;
        let lapsed: Vec<(TestId, ParticipantId)> = self
            .state
            .assignments
            .iter()
            .flat_map(|(t, a)| {
                a.slots
                    .iter()
                    .filter(|(_, s)| s.status == SlotStatus::Pending)
                    .filter(|(r, s)| {
                        now > s.deadline || !self.state.participants.get(r).is_some_and(|p| p.is_active())
                    })
                    .map(move |(r, _)| (*t, *r))
            })
            .collect();
        for (test_id, reviewer) in lapsed {
            self.emit(Event::ReviewLapsed { test_id, reviewer })?;
        }
        Ok(())
    }

    fn close_due_windows(&mut self, stream: StreamId) -> Result<(), E> {
        let now = self.state.now;
        loop {
            let st = &self.state.streams[&stream];
            let Some(w) = st
                .windows
                .iter()
                .filter(|w| w.state == WindowState::Open && w.closes_at <= now)
                .min_by_key(|w| (w.closes_at, w.index))
            else {
                return Ok(());
            };
            let cohort = w.id;
            let mut probe = w.clone();
            match probe.close(now, &st.hold_pool) {
                Err(CohortError::EmptyCohort) => {
                    self.emit(Event::WindowEmpty { stream, cohort })?;
                }
                Err(e) => return Err(e.into()),
                Ok(order) => {
                    let pairs: Vec<_> = order.pairs().collect();
                    let tests = order.tests.clone();
                    self.emit(Event::WindowClosed {
                        stream,
                        cohort,
                        models: order.models,
                        tests: order.tests,
                    })?;
                    self.evaluate_pairs(pairs, Some(cohort))?;
                    self.emit(Event::WindowEvaluated { stream, cohort })?;
                    for t in tests {
                        if self.state.suites[&t].state == SuiteState::Live {
                            self.evaluate_missing(t)?;
                            self.assign_reviewers(t)?;
                        }
                    }
                }
            }
        }
    }

    fn schedule_windows(&mut self, stream: StreamId) -> Result<(), E> {
        let first_index = self.state.stream(&stream)?.windows.last().map_or(0, |w| w.index + 1);
        self.emit(Event::WindowsScheduled {
            stream,
            origin: self.state.now,
            first_index,
        })?;
        Ok(())
    }

    // ---- misconduct --------------------------------------------------------

    fn open_case_inner(&mut self, subject: ParticipantId, kind: CaseKind, evidence: Vec<u64>) -> Result<u64, E> {
        let id = self.state.cases.len() as u64;
        self.emit(Event::CaseOpened {
            case: MisconductCase {
                id,
                subject,
                kind,
                evidence,
                resolution: Resolution::Pending,
                opened_at: self.state.now,
            },
        })?;
        Ok(id)
    }

    /// Opens a case by hand, for instance a leakage flag raised by a
    /// reviewer. Evidence names earlier audit sequence numbers.
    pub fn open_case(&mut self, subject: ParticipantId, kind: CaseKind, evidence: Vec<u64>) -> Result<u64, E> {
        self.command(|o| o.open_case_inner(subject, kind, evidence))
    }

    /// Checks a published item score against a reporter's rescoring. A
    /// disagreement beyond the configured tolerance opens a case against
    /// the model's creator; returns its id.
    pub fn report_score_check(
        &mut self,
        reporter: ParticipantId,
        body: ScoreCheckBody,
        signature: Signature,
    ) -> Result<Option<u64>, E> {
        self.command(|o| {
            let p = o.state.participant(&reporter)?;
            if !verify_canonical(&p.public_key, &body, &signature) {
                return Err(E::BadSignature);
            }
            if o.state.suite(&body.test_id)?.state != SuiteState::Published {
                return Err(E::NotPublished(body.test_id));
            }
            let r = o
                .state
                .records
                .get(&(body.model, body.test_id))
                .ok_or(E::UnknownModel(body.model))?;
            let logged = *r
                .item_scores
                .get(body.item as usize)
                .ok_or_else(|| inconsistent("item index out of range"))?;
            if (logged - body.rescored).abs() <= o.state.config.rescore_tolerance {
                return Ok(None);
            }
            let subject = o.state.models[&body.model].record.creator;
            let evidence = vec![r.evaluated_at.seq];
            o.open_case_inner(subject, CaseKind::ScoreLogMismatch, evidence).map(Some)
        })
    }

    /// Recomputes one logged item score from the sealed payload and
    /// response.
    fn rescore(&self, model: &ModelId, test: &TestId, item: usize) -> Option<f64> {
        let it = self.sealed.payloads.get(test)?.0.items.get(item)?;
        let resp = self.sealed.responses.get(test)?.get(model)?.get(item)?;
        Some(run_scorer(&it.scorer, &it.reference_answer, resp).unwrap_or(0.0))
    }

    fn recommended(&self, case: &MisconductCase) -> Result<Decision, E> {
        let stake = self.state.participant(&case.subject)?.stake;
        Ok(match case.kind {
            CaseKind::CommitMismatch => Decision::Slash {
                amount: stake,
                remove: true,
            },
            CaseKind::SpamPattern | CaseKind::ConsensusDeviation | CaseKind::LeakageFlag => {
                Decision::Slash {
                    amount: stake / 2,
                    remove: false,
                }
            }
            CaseKind::ScoreLogMismatch => {
                // The log is right when every record named as evidence
                // recomputes to its logged item scores.
                let consistent = case.evidence.iter().all(|seq| {
                    self.state
                        .records
                        .values()
                        .filter(|r| r.evaluated_at.seq == *seq)
                        .all(|r| {
                            r.item_scores.iter().enumerate().all(|(i, s)| {
                                self.rescore(&r.model_id, &r.test_id, i)
                                    .is_some_and(|x| (x - s).abs() <= self.state.config.rescore_tolerance)
                            })
                        })
                });
                if consistent {
                    Decision::Dismiss
                } else {
                    return Err(inconsistent("logged scores disagree with recomputation; decide manually"));
                }
            }
        })
    }

    pub fn resolve_misconduct(&mut self, case_id: u64, decision: Decision) -> Result<Resolution, E> {
        self.command(|o| {
            let case = o.state.cases.get(&case_id).ok_or(E::UnknownCase(case_id))?.clone();
            if case.resolution != Resolution::Pending {
                return Err(E::AlreadyResolved(case_id));
            }
            let decision = match decision {
                Decision::Recommended => o.recommended(&case)?,
                d => d,
            };
            let stake = o.state.participant(&case.subject)?.stake;
            let (resolution, shortfall) = match decision {
                Decision::Recommended => unreachable!("resolved above"),
                Decision::Dismiss => (Resolution::Dismissed, 0),
                Decision::Remove => (Resolution::Removed, 0),
                Decision::Slash { amount, remove } => (
                    Resolution::Slashed {
                        amount: amount.min(stake),
                        removed: remove,
                    },
                    amount.saturating_sub(stake),
                ),
            };
            o.emit(Event::CaseResolved {
                id: case_id,
                resolution,
                shortfall,
            })?;
            Ok(resolution)
        })
    }

    /// Applies the recommended decision to every pending case, skipping
    /// those that need a manual call.
    pub fn resolve_pending_cases(&mut self) -> Result<Vec<(u64, Resolution)>, E> {
        let pending: Vec<u64> = self
            .state
            .cases
            .values()
            .filter(|c| c.resolution == Resolution::Pending)
            .map(|c| c.id)
            .collect();
        let mut out = Vec::new();
        for id in pending {
            match self.resolve_misconduct(id, Decision::Recommended) {
                Ok(r) => out.push((id, r)),
                Err(E::Inconsistent(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(&tmp)?;
        std::io::Write::write_all(&mut f, bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
