//! Leaderboards computed from protocol state.

use std::collections::{BTreeMap, BTreeSet};

use super::state::State;
use crate::domain::{
    CohortId, EvalMode, ModelId, Role, ScoreRecord, ScoreStatus, Stamp, StreamId, SuiteState,
    TestId,
};
use crate::scoring::{
    build_leaderboards, model_score, normalize_across_cohorts, AffineMap, ContributorEntry,
    LeaderboardExport, Leaderboards, ModeSummary, ModelEntry, ModelScore, ReviewerEntry,
    WeightedScore,
};

impl State {
    fn model_records(&self, model: &ModelId) -> impl Iterator<Item = &ScoreRecord> + '_ {
        let model = *model;
        self.records
            .range((model, TestId::default())..)
            .take_while(move |((m, _), _)| *m == model)
            .map(|(_, r)| r)
    }

    /// Affine maps putting each cohort of `stream` on the reference
    /// cohort's scale. Anchors are models evaluated in more than one
    /// cohort; with none, every cohort keeps the identity map.
    pub fn cohort_maps(&self, stream: &StreamId) -> BTreeMap<CohortId, AffineMap> {
        let mut sums: BTreeMap<CohortId, BTreeMap<ModelId, (f64, u32)>> = BTreeMap::new();
        for ((m, t), r) in &self.records {
            let (EvalMode::Cohort, Some(c)) = (r.mode, r.cohort) else {
                continue;
            };
            let s = &self.suites[t];
            if s.stream != *stream || s.state == SuiteState::Invalidated {
                continue;
            }
            let e = sums.entry(c).or_default().entry(*m).or_insert((0.0, 0));
            e.0 += r.aggregate;
            e.1 += 1;
        }
        if sums.len() < 2 {
            return BTreeMap::new();
        }
        let mut seen: BTreeMap<ModelId, u32> = BTreeMap::new();
        for models in sums.values() {
            for m in models.keys() {
                *seen.entry(*m).or_default() += 1;
            }
        }
        let anchors: BTreeSet<ModelId> =
            seen.into_iter().filter(|(_, n)| *n > 1).map(|(m, _)| m).collect();
        let cohort_scores: BTreeMap<CohortId, Vec<(ModelId, f64)>> = sums
            .into_iter()
            .map(|(c, ms)| (c, ms.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()))
            .collect();
        normalize_across_cohorts(&cohort_scores, &anchors)
            .map(|n| n.transforms)
            .unwrap_or_default()
    }

    /// Inputs to a model's score on one stream. Converged models count only
    /// suites admitted after their registration.
    pub fn weighted_scores(
        &self,
        model: &ModelId,
        stream: &StreamId,
        maps: &BTreeMap<CohortId, AffineMap>,
    ) -> Vec<WeightedScore> {
        let Some(m) = self.models.get(model) else {
            return Vec::new();
        };
        let converged = m.record.score_status == ScoreStatus::Converged;
        self.model_records(model)
            .filter_map(|r| {
                let s = &self.suites[&r.test_id];
                if s.stream != *stream || s.state == SuiteState::Invalidated {
                    return None;
                }
                if converged && s.admitted_at.is_none_or(|a| a <= m.record.registered_at) {
                    return None;
                }
                let map = r.cohort.and_then(|c| maps.get(&c)).copied().unwrap_or(AffineMap::IDENTITY);
                Some(WeightedScore {
                    weight: s.weight?,
                    score: map.apply(r.aggregate),
                    suite_published_at: s.published_at,
                })
            })
            .collect()
    }

    pub fn model_score_on(&self, model: &ModelId, stream: &StreamId) -> ModelScore {
        let maps = self.cohort_maps(stream);
        let registered = self.models.get(model).map_or(Stamp::default(), |m| m.record.registered_at);
        model_score(&self.weighted_scores(model, stream, &maps), registered)
    }

    pub fn build_leaderboards(&self) -> Leaderboards {
        let contributors = self
            .participants
            .values()
            .filter(|p| p.role == Role::Contributor && p.is_active())
            .map(|p| ContributorEntry {
                id: p.id,
                score: self.ledger.contributor_rep(&p.id),
                suites_rated: self
                    .suites
                    .values()
                    .filter(|s| s.contributor == p.id && s.quality.is_some())
                    .count() as u32,
                registered_at: p.registered_at,
            })
            .collect();
        let reviewers = self
            .participants
            .values()
            .filter(|p| p.role == Role::Reviewer && p.is_active())
            .map(|p| ReviewerEntry {
                id: p.id,
                score: self.ledger.reviewer_rep(&p.id),
                reviews: self.reviewer_history(&p.id).len() as u32,
                registered_at: p.registered_at,
            })
            .collect();

        let mut per_stream = BTreeMap::new();
        for stream in self.streams.keys() {
            let maps = self.cohort_maps(stream);
            let entries: Vec<ModelEntry> = self
                .stream_models(stream)
                .into_iter()
                .map(|id| {
                    let m = &self.models[&id];
                    let mut modes = ModeSummary::default();
                    let mut cohorts = BTreeSet::new();
                    for r in self.model_records(&id) {
                        if self.suites[&r.test_id].stream != *stream {
                            continue;
                        }
                        match r.mode {
                            EvalMode::Immediate => modes.immediate_records += 1,
                            EvalMode::Cohort => modes.cohort_records += 1,
                        }
                        cohorts.extend(r.cohort);
                    }
                    modes.cohorts = cohorts.into_iter().collect();
                    ModelEntry {
                        id,
                        score: model_score(
                            &self.weighted_scores(&id, stream, &maps),
                            m.record.registered_at,
                        ),
                        status: m.record.score_status,
                        modes,
                        registered_at: m.record.registered_at,
                    }
                })
                .collect();
            per_stream.insert(*stream, entries);
        }
        build_leaderboards(contributors, reviewers, per_stream)
    }

    pub fn build_export(&self, at: Stamp) -> LeaderboardExport {
        LeaderboardExport::new(at, self.build_leaderboards())
    }
}
