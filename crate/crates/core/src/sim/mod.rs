//! Deterministic agent-based simulation of the protocol.
//!
//! A [`Scenario`] names a population of contributors, reviewers and models.
//! [`run_scenario`] drives a real [`Orchestrator`] with in-process model
//! endpoints for a number of simulated days and summarizes the outcome in a
//! [`SimReport`]. Everything random flows from one seeded generator, so a
//! (scenario, seed) pair always yields the same report.

mod report;
pub mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use report::{
    AssertionOutcome, CaseStats, CollusionStats, InflationPoint, ModelOutcome, ReviewerStats,
    SimReport, SuiteStats, SweepRow, TwinComparison,
};
pub use world::{FnEndpoint, ItemTag, SimConnector, SimModel};

use crate::domain::{ModelId, ParticipantId, Rating, Role, ScoreStatus, StreamId, TestId};
use crate::integrity::{Salt, SigningIdentity};
use crate::orchestrator::{
    requests, Orchestrator, OrchestratorError, ProtocolConfig, SubmitOutcome, VirtualSleeper,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Protocol(#[from] OrchestratorError),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

fn default_sigma() -> f64 {
    0.2
}

fn default_items() -> usize {
    20
}

/// One population entry of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Submits suites of true quality 1 or 2 at `rate` suites per day each.
    HonestContributor { count: usize, rate: f64 },
    /// Submits suites tailored to `target`.
    CherryPicker { count: usize, rate: f64, target: String },
    /// Submits ordinary-looking suites whose items were handed to `partner`.
    Colluder { count: usize, rate: f64, partner: String },
    /// Submits garbage suites.
    Spammer { count: usize, rate: f64 },
    HonestReviewer {
        count: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    LazyReviewer { count: usize, constant: i64 },
    /// Rates `1 - q` for true quality `q`.
    InvertedReviewer { count: usize },
    HonestModel {
        name: String,
        theta: f64,
        #[serde(default)]
        register_round: u64,
        #[serde(default)]
        cohort: bool,
    },
    /// Knows every item of the suites sitting unpublished in the stream
    /// when it registers.
    ContaminatedModel {
        name: String,
        theta: f64,
        #[serde(default)]
        register_round: u64,
        #[serde(default)]
        cohort: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Comparison {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Eq => lhs == rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
            Comparison::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub metric: String,
    pub op: Comparison,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Simulated days.
    pub rounds: u64,
    #[serde(default = "default_items")]
    pub items_per_suite: usize,
    /// Also run the same seed with every contaminated model made honest and
    /// compare converged scores.
    #[serde(default)]
    pub honest_twin: bool,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let s: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.protocol.validate().map_err(|e| invalid(e.to_string()))?;
        if self.rounds == 0 {
            return Err(invalid("rounds must be positive"));
        }
        if self.items_per_suite == 0 || self.items_per_suite > self.protocol.max_items {
            return Err(invalid("items_per_suite must lie in 1..=max_items"));
        }
        let mut names = BTreeSet::new();
        for a in &self.agents {
            if let Some((name, theta)) = a.model() {
                if !names.insert(name) {
                    return Err(invalid(format!("duplicate model name {name}")));
                }
                if !(0.0..=1.0).contains(&theta) {
                    return Err(invalid(format!("theta of {name} outside [0, 1]")));
                }
            }
        }
        if names.is_empty() {
            return Err(invalid("scenario needs at least one model"));
        }
        for a in &self.agents {
            match a {
                AgentSpec::CherryPicker { target: m, rate, .. }
                | AgentSpec::Colluder { partner: m, rate, .. } => {
                    if !names.contains(m.as_str()) {
                        return Err(invalid(format!("unknown model {m}")));
                    }
                    check_rate(*rate)?;
                }
                AgentSpec::HonestContributor { rate, .. } | AgentSpec::Spammer { rate, .. } => {
                    check_rate(*rate)?
                }
                AgentSpec::HonestReviewer { sigma, .. } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                    return Err(invalid("sigma must be non-negative"));
                }
                AgentSpec::LazyReviewer { constant, .. } => {
                    Rating::new(*constant).map_err(|e| invalid(e.to_string()))?;
                }
                _ => {}
            }
        }
        for a in &self.assertions {
            if !SimReport::METRICS.contains(&a.metric.as_str()) {
                return Err(invalid(format!("unknown metric {}", a.metric)));
            }
        }
        Ok(())
    }

    /// The same scenario with every contaminated model made honest.
    pub fn honest_twin(&self) -> Scenario {
        let mut twin = self.clone();
        twin.honest_twin = false;
        twin.assertions.clear();
        for a in &mut twin.agents {
            if let AgentSpec::ContaminatedModel {
                name,
                theta,
                register_round,
                cohort,
            } = a
            {
                *a = AgentSpec::HonestModel {
                    name: name.clone(),
                    theta: *theta,
                    register_round: *register_round,
                    cohort: *cohort,
                };
            }
        }
        twin
    }
}

fn check_rate(rate: f64) -> Result<(), SimError> {
    if rate >= 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(invalid("rate must be non-negative"))
    }
}

impl AgentSpec {
    fn model(&self) -> Option<(&str, f64)> {
        match self {
            AgentSpec::HonestModel { name, theta, .. }
            | AgentSpec::ContaminatedModel { name, theta, .. } => Some((name, *theta)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Authoring {
    Honest,
    Cherry,
    Collude,
    Spam,
}

struct Contributor {
    identity: SigningIdentity,
    id: ParticipantId,
    authoring: Authoring,
    rate: f64,
    model: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rater {
    Honest(f64),
    Lazy(i64),
    Inverted,
}

struct Reviewer {
    identity: SigningIdentity,
    id: ParticipantId,
    rater: Rater,
}

struct PlannedModel {
    name: String,
    theta: f64,
    contaminated: bool,
    register_round: u64,
    cohort: bool,
    registered: Option<ModelId>,
    creator: Option<SigningIdentity>,
}

/// Ground truth the simulator keeps about each submitted suite.
pub(crate) struct SuiteTruth {
    pub quality: f64,
    pub tag: ItemTag,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
    run_key: [u8; 32],
    orch: Orchestrator,
    connector: Arc<SimConnector>,
    stream: StreamId,
    contributors: Vec<Contributor>,
    reviewers: Vec<Reviewer>,
    models: Vec<PlannedModel>,
    truth: BTreeMap<TestId, SuiteTruth>,
    prompts: BTreeMap<TestId, Vec<String>>,
    next_suite: u64,
    history: BTreeMap<String, Vec<(u64, Option<f64>, ScoreStatus)>>,
    reviews_submitted: u64,
}

/// Runs `scenario` with `seed`. Re-running with the same inputs gives a
/// byte-identical report.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let mut report = run_once(scenario, seed)?;
    if scenario.honest_twin {
        let twin = run_once(&scenario.honest_twin(), seed)?;
        report.attach_twin(&twin);
    }
    report.check_assertions(&scenario.assertions);
    Ok(report)
}

fn run_once(scenario: &Scenario, seed: u64) -> Result<SimReport, SimError> {
    let mut sim = Sim::new(scenario, seed)?;
    sim.populate()?;
    for round in 0..scenario.rounds {
        sim.round(round)?;
    }
    Ok(report::build(&sim.finish(), seed))
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, seed: u64) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run_key: [u8; 32] = rng.gen();
        let server = SigningIdentity::generate(&mut rng);
        let beacon_master: [u8; 32] = rng.gen();
        let connector = Arc::new(SimConnector::new());
        let orch = Orchestrator::new(
            scenario.protocol.clone(),
            server,
            beacon_master,
            Arc::clone(&connector) as Arc<dyn crate::orchestrator::Connector>,
        )?
        .with_sleeper(Arc::new(VirtualSleeper::default()))
        .with_parallel(false);
        Ok(Self {
            scenario,
            rng,
            run_key,
            orch,
            connector,
            stream: StreamId::named(&scenario.protocol.streams[0]),
            contributors: Vec::new(),
            reviewers: Vec::new(),
            models: Vec::new(),
            truth: BTreeMap::new(),
            prompts: BTreeMap::new(),
            next_suite: 0,
            history: BTreeMap::new(),
            reviews_submitted: 0,
        })
    }

    fn register(&mut self, role: Role, stake: u64) -> Result<(SigningIdentity, ParticipantId), SimError> {
        let identity = SigningIdentity::generate(&mut self.rng);
        let id = self
            .orch
            .register_participant(requests::registration(&identity, role, Vec::new(), stake))?;
        Ok((identity, id))
    }

    fn populate(&mut self) -> Result<(), SimError> {
        let stakes = &self.scenario.protocol.min_stake;
        let (c_stake, r_stake) = (stakes.contributor * 2, stakes.reviewer * 2);
        for spec in &self.scenario.agents {
            match spec {
                AgentSpec::HonestContributor { count, rate }
                | AgentSpec::Spammer { count, rate }
                | AgentSpec::CherryPicker { count, rate, .. }
                | AgentSpec::Colluder { count, rate, .. } => {
                    let (authoring, model) = match spec {
                        AgentSpec::HonestContributor { .. } => (Authoring::Honest, None),
                        AgentSpec::Spammer { .. } => (Authoring::Spam, None),
                        AgentSpec::CherryPicker { target, .. } => (Authoring::Cherry, Some(target.clone())),
                        AgentSpec::Colluder { partner, .. } => (Authoring::Collude, Some(partner.clone())),
                        _ => unreachable!(),
                    };
                    for _ in 0..*count {
                        let (identity, id) = self.register(Role::Contributor, c_stake)?;
                        self.contributors.push(Contributor {
                            identity,
                            id,
                            authoring,
                            rate: *rate,
                            model: model.clone(),
                        });
                    }
                }
                AgentSpec::HonestReviewer { count, .. }
                | AgentSpec::LazyReviewer { count, .. }
                | AgentSpec::InvertedReviewer { count } => {
                    let rater = match spec {
                        AgentSpec::HonestReviewer { sigma, .. } => Rater::Honest(*sigma),
                        AgentSpec::LazyReviewer { constant, .. } => Rater::Lazy(*constant),
                        _ => Rater::Inverted,
                    };
                    for _ in 0..*count {
                        let (identity, id) = self.register(Role::Reviewer, r_stake)?;
                        self.reviewers.push(Reviewer { identity, id, rater });
                    }
                }
                AgentSpec::HonestModel {
                    name,
                    theta,
                    register_round,
                    cohort,
                }
                | AgentSpec::ContaminatedModel {
                    name,
                    theta,
                    register_round,
                    cohort,
                } => self.models.push(PlannedModel {
                    name: name.clone(),
                    theta: *theta,
                    contaminated: matches!(spec, AgentSpec::ContaminatedModel { .. }),
                    register_round: *register_round,
                    cohort: *cohort,
                    registered: None,
                    creator: None,
                }),
            }
        }
        Ok(())
    }

    fn round(&mut self, round: u64) -> Result<(), SimError> {
        self.register_models(round)?;
        self.submit_suites()?;
        self.review()?;
        self.orch.resolve_pending_cases()?;
        self.orch.advance_days(1)?;
        self.record(round);
        Ok(())
    }

    /// Prompts of suites the stream still keeps secret.
    fn unpublished_prompts(&self) -> BTreeSet<String> {
        use crate::domain::SuiteState::{Committed, Live};
        self.orch
            .state()
            .suites
            .values()
            .filter(|s| s.stream == self.stream && matches!(s.state, Live | Committed))
            .flat_map(|s| self.prompts.get(&s.id).into_iter().flatten().cloned())
            .collect()
    }

    fn register_models(&mut self, round: u64) -> Result<(), SimError> {
        for i in 0..self.models.len() {
            if self.models[i].register_round != round || self.models[i].registered.is_some() {
                continue;
            }
            let leaks = if self.models[i].contaminated {
                self.unpublished_prompts()
            } else {
                BTreeSet::new()
            };
            let m = &self.models[i];
            let url = format!("sim://{}", m.name);
            self.connector.insert(
                &url,
                Arc::new(SimModel {
                    run_key: self.run_key,
                    name: m.name.clone(),
                    theta: m.theta,
                    leaks: Arc::new(leaks),
                }),
            );
            let (identity, _) = self.register(Role::ModelCreator, 0)?;
            let reg = requests::model_registration(
                &identity,
                world::sim_descriptor(&url),
                BTreeSet::from([self.stream]),
                0,
            );
            let id = self.orch.register_model(reg)?;
            self.models[i].registered = Some(id);
            self.models[i].creator = Some(identity);
        }
        self.join_cohorts()
    }

    /// Cohort models stay enrolled in some open window, so every window
    /// they outlive evaluates them.
    fn join_cohorts(&mut self) -> Result<(), SimError> {
        use crate::reservoir::WindowState;
        for m in self.models.iter().filter(|m| m.cohort) {
            let (Some(id), Some(identity)) = (m.registered, &m.creator) else {
                continue;
            };
            let now = self.orch.now();
            let enrolled = self.orch.state().stream(&self.stream)?.windows.iter().any(|w| {
                w.state == WindowState::Open && w.closes_at >= now && w.registered.contains(&id)
            });
            if !enrolled {
                let sig = requests::cohort_join(identity, id, self.stream);
                self.orch.join_cohort(id, self.stream, sig)?;
            }
        }
        Ok(())
    }

    fn submit_suites(&mut self) -> Result<(), SimError> {
        for i in 0..self.contributors.len() {
            if !self.is_active(&self.contributors[i].id) {
                continue;
            }
            let rate = self.contributors[i].rate;
            let mut n = rate.floor() as u64;
            if self.rng.gen::<f64>() < rate.fract() {
                n += 1;
            }
            for _ in 0..n {
                self.submit_one(i)?;
            }
        }
        Ok(())
    }

    fn submit_one(&mut self, who: usize) -> Result<(), SimError> {
        let c = &self.contributors[who];
        let (tag, quality) = match c.authoring {
            Authoring::Honest => (ItemTag::Normal, if self.rng.gen::<bool>() { 2.0 } else { 1.0 }),
            Authoring::Spam => (ItemTag::Spam, -1.0),
            Authoring::Cherry => (ItemTag::Tailored(c.model.clone().unwrap_or_default()), 0.0),
            Authoring::Collude => (ItemTag::Colluded(c.model.clone().unwrap_or_default()), 1.0),
        };
        let suite = self.next_suite;
        self.next_suite += 1;
        let payload = world::payload(&tag, suite, self.scenario.items_per_suite);
        let prompts = payload.items.iter().map(|i| i.prompt.clone()).collect();
        let salt = Salt::random(&mut self.rng);
        let sub = requests::suite_submission(&c.identity, self.stream, payload, salt);
        let outcome = self.orch.submit_test(sub)?;
        if let SubmitOutcome::Invalidated { reasons, .. } = &outcome {
            return Err(invalid(format!("simulated suite rejected: {}", reasons.join("; "))));
        }
        self.truth.insert(outcome.id(), SuiteTruth { quality, tag });
        self.prompts.insert(outcome.id(), prompts);
        Ok(())
    }

    fn is_active(&self, id: &ParticipantId) -> bool {
        self.orch.state().participants.get(id).is_some_and(|p| p.is_active())
    }

    fn review(&mut self) -> Result<(), SimError> {
        for i in 0..self.reviewers.len() {
            let id = self.reviewers[i].id;
            if !self.is_active(&id) {
                continue;
            }
            for task in self.orch.review_queue(&id) {
                // The queue is a snapshot; an earlier review may have
                // finalized or retired the suite.
                if !self.orch.review_queue(&id).iter().any(|t| t.test_id == task.test_id) {
                    continue;
                }
                let r = &self.reviewers[i];
                let (req, sig) = requests::reveal_request(&r.identity, task.test_id);
                self.orch.reveal(req, sig)?;
                let q = self.truth.get(&task.test_id).map_or(0.0, |t| t.quality);
                let rating = match r.rater {
                    Rater::Honest(sigma) => {
                        let noise = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
                        Rating::nearest(q + noise.sample(&mut self.rng))
                    }
                    Rater::Lazy(c) => Rating::nearest(c as f64),
                    Rater::Inverted => Rating::nearest(1.0 - q),
                };
                let r = &self.reviewers[i];
                let (body, sig) = requests::review(&r.identity, task.test_id, rating, "");
                self.orch.submit_review(id, body, sig)?;
                self.reviews_submitted += 1;
            }
        }
        Ok(())
    }

    fn record(&mut self, round: u64) {
        for m in &self.models {
            let Some(id) = m.registered else { continue };
            let state = self.orch.state();
            let score = state.model_score_on(&id, &self.stream).value();
            let status = state.models[&id].record.score_status;
            self.history
                .entry(m.name.clone())
                .or_default()
                .push((round, score, status));
        }
    }

    fn finish(self) -> report::Outcome {
        report::Outcome {
            scenario: self.scenario.name.clone(),
            rounds: self.scenario.rounds,
            stream: self.stream,
            models: self
                .models
                .into_iter()
                .map(|m| report::ModelPlan {
                    name: m.name,
                    theta: m.theta,
                    contaminated: m.contaminated,
                    register_round: m.register_round,
                    id: m.registered,
                })
                .collect(),
            reviewers: self.reviewers.iter().map(|r| (r.id, r.rater_kind())).collect(),
            truth: self.truth,
            history: self.history,
            reviews_submitted: self.reviews_submitted,
            orch: self.orch,
        }
    }
}

impl Reviewer {
    fn rater_kind(&self) -> report::RaterKind {
        match self.rater {
            Rater::Honest(_) => report::RaterKind::Honest,
            Rater::Lazy(_) => report::RaterKind::Lazy,
            Rater::Inverted => report::RaterKind::Inverted,
        }
    }
}

/// Runs every combination of `grid` values against every seed. Grid keys
/// are protocol override names such as `capacity` or `hold_fraction`.
pub fn sweep(
    base: &Scenario,
    grid: &BTreeMap<String, Vec<f64>>,
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SimError> {
    if seeds.is_empty() {
        return Err(invalid("sweep needs at least one seed"));
    }
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(invalid("sweep grid must name at least one value per key"));
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), *v));
                    q
                })
            })
            .collect();
    }
    let mut rows = Vec::with_capacity(points.len() * seeds.len());
    for point in points {
        let mut scenario = base.clone();
        scenario
            .protocol
            .apply_env(point.iter().map(|(k, v)| {
                (format!("{}{}", crate::orchestrator::ENV_PREFIX, k.to_uppercase()), format!("{v}"))
            }))
            .map_err(|e| invalid(e.to_string()))?;
        for &seed in seeds {
            let report = run_scenario(&scenario, seed)?;
            rows.push(SweepRow::new(&point, &report));
        }
    }
    Ok(rows)
}

/// Writes sweep rows as CSV with one column per grid key.
pub fn sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let keys: Vec<String> = rows
        .first()
        .map(|r| r.point.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = keys.clone();
    header.extend(SweepRow::COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.point.iter().map(|(_, v)| format!("{v}")).collect();
        rec.extend(r.values());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
