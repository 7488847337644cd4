//! Summaries of a simulation run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::world::ItemTag;
use super::{Assertion, Comparison, SuiteTruth};
use crate::domain::{ModelId, ParticipantId, ScoreStatus, StreamId, SuiteState, TestId};
use crate::integrity::sha256;
use crate::orchestrator::{Orchestrator, Resolution};
use crate::scoring::stats::spearman;

/// z-score above which the collusion flagger marks a (suite, model) pair.
pub const COLLUSION_Z: f64 = 3.0;
const ROC_THRESHOLDS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RaterKind {
    Honest,
    Lazy,
    Inverted,
}

pub(crate) struct ModelPlan {
    pub name: String,
    pub theta: f64,
    pub contaminated: bool,
    pub register_round: u64,
    pub id: Option<ModelId>,
}

/// Everything a finished run leaves behind.
pub(crate) struct Outcome {
    pub scenario: String,
    pub rounds: u64,
    pub stream: StreamId,
    pub models: Vec<ModelPlan>,
    pub reviewers: Vec<(ParticipantId, RaterKind)>,
    pub truth: BTreeMap<TestId, SuiteTruth>,
    pub history: BTreeMap<String, Vec<(u64, Option<f64>, ScoreStatus)>>,
    pub reviews_submitted: u64,
    pub orch: Orchestrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub name: String,
    pub contaminated: bool,
    pub theta: f64,
    pub score: Option<f64>,
    pub converged: bool,
    pub registered_round: u64,
    pub converged_round: Option<u64>,
    /// Mean of `score - theta` over ranked preliminary rounds.
    pub preliminary_inflation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationPoint {
    pub model: String,
    pub round: u64,
    pub inflation: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseStats {
    pub opened: BTreeMap<String, u64>,
    pub resolved: BTreeMap<String, u64>,
    pub slashed: u64,
    pub removed_contributors: u64,
    pub removed_reviewers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewerStats {
    pub reviews: u64,
    pub honest_mean: Option<f64>,
    pub inverted_mean: Option<f64>,
    pub lazy_mean: Option<f64>,
    /// `honest_mean - inverted_mean`.
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollusionStats {
    /// (suite, model) pairs authored for that model.
    pub positives: u64,
    pub negatives: u64,
    pub flagged_positives: u64,
    pub flagged_negatives: u64,
    /// `(threshold, true positive rate, false positive rate)`.
    pub roc: Vec<(f64, f64, f64)>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub submitted: u64,
    pub published: u64,
    pub invalidated: u64,
    pub live: u64,
    pub queued: u64,
    pub max_spam_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinComparison {
    pub model: String,
    pub score: Option<f64>,
    pub twin_score: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub metric: String,
    pub op: Comparison,
    pub value: f64,
    pub actual: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub rounds: u64,
    /// Spearman correlation of final model scores with abilities.
    pub fidelity: Option<f64>,
    pub models: Vec<ModelOutcome>,
    pub inflation: Vec<InflationPoint>,
    pub cases: CaseStats,
    pub reviewers: ReviewerStats,
    pub collusion: CollusionStats,
    pub suites: SuiteStats,
    pub audit_events: u64,
    pub audit_head: String,
    pub board_hash: Option<String>,
    pub twins: Vec<TwinComparison>,
    pub assertions: Vec<AssertionOutcome>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub(crate) fn build(o: &Outcome, seed: u64) -> SimReport {
    let state = o.orch.state();
    let models: Vec<ModelOutcome> = o
        .models
        .iter()
        .map(|m| {
            let hist = o.history.get(&m.name).map_or(&[][..], |h| h);
            let (score, converged) = m.id.map_or((None, false), |id| {
                (
                    state.model_score_on(&id, &o.stream).value(),
                    state.models[&id].record.score_status == ScoreStatus::Converged,
                )
            });
            let prelim: Vec<f64> = hist
                .iter()
                .filter(|(_, _, st)| *st == ScoreStatus::Preliminary)
                .filter_map(|(_, s, _)| s.map(|s| s - m.theta))
                .collect();
            ModelOutcome {
                name: m.name.clone(),
                contaminated: m.contaminated,
                theta: m.theta,
                score,
                converged,
                registered_round: m.register_round,
                converged_round: hist
                    .iter()
                    .find(|(_, _, st)| *st == ScoreStatus::Converged)
                    .map(|(r, _, _)| *r),
                preliminary_inflation: mean(&prelim),
            }
        })
        .collect();

    let (scores, thetas): (Vec<f64>, Vec<f64>) = models
        .iter()
        .filter_map(|m| m.score.map(|s| (s, m.theta)))
        .unzip();
    let fidelity = if scores.len() >= 2 { spearman(&scores, &thetas) } else { None };

    let inflation = o
        .models
        .iter()
        .filter(|m| m.contaminated)
        .flat_map(|m| {
            o.history.get(&m.name).into_iter().flatten().map(move |(round, s, st)| InflationPoint {
                model: m.name.clone(),
                round: *round,
                inflation: s.map(|s| s - m.theta),
                converged: *st == ScoreStatus::Converged,
            })
        })
        .collect();

    SimReport {
        scenario: o.scenario.clone(),
        seed,
        rounds: o.rounds,
        fidelity,
        models,
        inflation,
        cases: case_stats(o),
        reviewers: reviewer_stats(o),
        collusion: collusion_stats(o),
        suites: suite_stats(o),
        audit_events: o.orch.audit_len(),
        audit_head: o.orch.audit_head().to_hex(),
        board_hash: o.orch.leaderboards().map(|e| e.hash().to_hex()),
        twins: Vec::new(),
        assertions: Vec::new(),
    }
}

fn case_stats(o: &Outcome) -> CaseStats {
    let state = o.orch.state();
    let mut s = CaseStats::default();
    for c in state.cases.values() {
        let kind = format!("{:?}", c.kind);
        *s.opened.entry(kind.clone()).or_default() += 1;
        if c.resolution != Resolution::Pending {
            *s.resolved.entry(kind).or_default() += 1;
        }
        if let Resolution::Slashed { amount, .. } = c.resolution {
            s.slashed += amount;
        }
    }
    for p in state.participants.values().filter(|p| !p.is_active()) {
        match p.role {
            crate::domain::Role::Contributor => s.removed_contributors += 1,
            crate::domain::Role::Reviewer => s.removed_reviewers += 1,
            crate::domain::Role::ModelCreator => {}
        }
    }
    s
}

fn reviewer_stats(o: &Outcome) -> ReviewerStats {
    let state = o.orch.state();
    let of = |kind: RaterKind| {
        let reps: Vec<f64> = o
            .reviewers
            .iter()
            .filter(|(id, k)| *k == kind && !state.reviewer_history(id).is_empty())
            .map(|(id, _)| state.reviewer_reputation(id))
            .collect();
        mean(&reps)
    };
    let honest_mean = of(RaterKind::Honest);
    let inverted_mean = of(RaterKind::Inverted);
    ReviewerStats {
        reviews: o.reviews_submitted,
        honest_mean,
        inverted_mean,
        lazy_mean: of(RaterKind::Lazy),
        separation: honest_mean.zip(inverted_mean).map(|(h, i)| h - i),
    }
}

/// Leave-one-out z-score of each suite score against the same model's
/// other suites; pairs authored for the model are the positives.
fn collusion_stats(o: &Outcome) -> CollusionStats {
    let state = o.orch.state();
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for m in &o.models {
        let Some(id) = m.id else { continue };
        let rows: Vec<(f64, bool)> = state
            .records
            .values()
            .filter(|r| r.model_id == id && state.suites[&r.test_id].state != SuiteState::Invalidated)
            .filter_map(|r| {
                let t = o.truth.get(&r.test_id)?;
                let positive = matches!(&t.tag, ItemTag::Tailored(n) | ItemTag::Colluded(n) if *n == m.name);
                Some((r.aggregate, positive))
            })
            .collect();
        if rows.len() < 3 {
            continue;
        }
        let total: f64 = rows.iter().map(|(x, _)| x).sum();
        let total_sq: f64 = rows.iter().map(|(x, _)| x * x).sum();
        let n = (rows.len() - 1) as f64;
        for &(x, positive) in &rows {
            let mu = (total - x) / n;
            let var = ((total_sq - x * x) / n - mu * mu).max(0.0);
            let z = if var > 1e-12 {
                (x - mu) / var.sqrt()
            } else if (x - mu).abs() > 1e-12 {
                f64::INFINITY.copysign(x - mu)
            } else {
                0.0
            };
            scored.push((z, positive));
        }
    }
    let positives = scored.iter().filter(|(_, p)| *p).count() as u64;
    let negatives = scored.len() as u64 - positives;
    let rate = |t: f64, want: bool| {
        let hits = scored.iter().filter(|(z, p)| *p == want && *z > t).count() as f64;
        let all = if want { positives } else { negatives } as f64;
        if all > 0.0 { hits / all } else { 0.0 }
    };
    let count = |want: bool| scored.iter().filter(|(z, p)| *p == want && *z > COLLUSION_Z).count() as u64;
    let auc = (positives > 0 && negatives > 0).then(|| {
        let mut wins = 0.0;
        for (zp, _) in scored.iter().filter(|(_, p)| *p) {
            for (zn, _) in scored.iter().filter(|(_, p)| !*p) {
                wins += if zp > zn {
                    1.0
                } else if zp == zn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (positives as f64 * negatives as f64)
    });
    CollusionStats {
        positives,
        negatives,
        flagged_positives: count(true),
        flagged_negatives: count(false),
        roc: ROC_THRESHOLDS.iter().map(|&t| (t, rate(t, true), rate(t, false))).collect(),
        auc,
    }
}

fn suite_stats(o: &Outcome) -> SuiteStats {
    let state = o.orch.state();
    let count = |st: SuiteState| state.suites.values().filter(|s| s.state == st).count() as u64;
    SuiteStats {
        submitted: state.suites.len() as u64,
        published: count(SuiteState::Published),
        invalidated: count(SuiteState::Invalidated),
        live: count(SuiteState::Live),
        queued: state.streams.values().map(|s| s.pending.len() as u64).sum(),
        max_spam_weight: o
            .truth
            .iter()
            .filter(|(_, t)| t.tag == ItemTag::Spam)
            .filter_map(|(id, _)| state.suites.get(id)?.weight)
            .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w)))),
    }
}

impl SimReport {
    /// Metric names usable in scenario assertions and sweep tables.
    pub const METRICS: &'static [&'static str] = &[
        "fidelity",
        "reviewer_separation",
        "honest_reviewer_mean",
        "inverted_reviewer_mean",
        "preliminary_inflation",
        "max_twin_gap",
        "collusion_auc",
        "cases_opened",
        "cases_resolved",
        "slashed",
        "removed_contributors",
        "removed_reviewers",
        "max_spam_weight",
        "reviews",
        "published",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        let contaminated: Vec<f64> = self
            .models
            .iter()
            .filter(|m| m.contaminated)
            .filter_map(|m| m.preliminary_inflation)
            .collect();
        match name {
            "fidelity" => self.fidelity,
            "reviewer_separation" => self.reviewers.separation,
            "honest_reviewer_mean" => self.reviewers.honest_mean,
            "inverted_reviewer_mean" => self.reviewers.inverted_mean,
            // The weakest inflation among contaminated models.
            "preliminary_inflation" => contaminated.into_iter().reduce(f64::min),
            "max_twin_gap" => {
                if self.twins.iter().any(|t| t.gap.is_none()) {
                    None
                } else {
                    self.twins.iter().filter_map(|t| t.gap).reduce(f64::max)
                }
            }
            "collusion_auc" => self.collusion.auc,
            "cases_opened" => Some(self.cases.opened.values().sum::<u64>() as f64),
            "cases_resolved" => Some(self.cases.resolved.values().sum::<u64>() as f64),
            "slashed" => Some(self.cases.slashed as f64),
            "removed_contributors" => Some(self.cases.removed_contributors as f64),
            "removed_reviewers" => Some(self.cases.removed_reviewers as f64),
            "max_spam_weight" => self.suites.max_spam_weight,
            "reviews" => Some(self.reviewers.reviews as f64),
            "published" => Some(self.suites.published as f64),
            _ => None,
        }
    }

    /// Compares each contaminated model's converged score with the same
    /// model's score in the honest-twin run.
    pub(crate) fn attach_twin(&mut self, twin: &SimReport) {
        self.twins = self
            .models
            .iter()
            .filter(|m| m.contaminated)
            .map(|m| {
                let score = m.score.filter(|_| m.converged);
                let twin_score = twin
                    .models
                    .iter()
                    .find(|t| t.name == m.name && t.converged)
                    .and_then(|t| t.score);
                TwinComparison {
                    model: m.name.clone(),
                    score,
                    twin_score,
                    gap: score.zip(twin_score).map(|(a, b)| (a - b).abs()),
                }
            })
            .collect();
    }

    pub(crate) fn check_assertions(&mut self, assertions: &[Assertion]) {
        self.assertions = assertions
            .iter()
            .map(|a| {
                let actual = self.metric(&a.metric);
                AssertionOutcome {
                    metric: a.metric.clone(),
                    op: a.op,
                    value: a.value,
                    actual,
                    passed: actual.is_some_and(|x| a.op.holds(x, a.value)),
                }
            })
            .collect();
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        sha256(self.to_json().as_bytes()).to_hex()
    }

    /// Final ranked scores by model name.
    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.models
            .iter()
            .filter_map(|m| m.score.map(|s| (m.name.clone(), s)))
            .collect()
    }
}

/// One line of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: Vec<(String, f64)>,
    pub seed: u64,
    pub metrics: Vec<Option<f64>>,
    pub report_hash: String,
}

impl SweepRow {
    pub const COLUMNS: &'static [&'static str] = &[
        "seed",
        "fidelity",
        "reviewer_separation",
        "preliminary_inflation",
        "max_twin_gap",
        "collusion_auc",
        "cases_opened",
        "published",
        "report_hash",
    ];

    pub(crate) fn new(point: &[(String, f64)], report: &SimReport) -> Self {
        Self {
            point: point.to_vec(),
            seed: report.seed,
            metrics: Self::COLUMNS[1..Self::COLUMNS.len() - 1]
                .iter()
                .map(|m| report.metric(m))
                .collect(),
            report_hash: report.hash(),
        }
    }

    pub(crate) fn values(&self) -> Vec<String> {
        let mut out = vec![self.seed.to_string()];
        out.extend(
            self.metrics
                .iter()
                .map(|m| m.map_or_else(String::new, |v| format!("{v}"))),
        );
        out.push(self.report_hash.clone());
        out
    }
}
