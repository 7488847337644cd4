//! The three public leaderboards and their export document.
//!
//! Boards are sorted by descending score; unranked entries go last; ties
//! fall to the earlier registration, then to the smaller id. The export is
//! pretty-printed JSON with struct-ordered keys, and its SHA-256 is what the
//! audit log records at each rebuild.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::ModelScore;
use super::stats::compensated_sum;
use crate::domain::{CohortId, ModelId, ParticipantId, ScoreStatus, Stamp, StreamId};
use crate::integrity::{sha256, Digest};

pub const EXPORT_FORMAT: &str = "proctor.leaderboards";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributorEntry {
    pub id: ParticipantId,
    pub score: f64,
    pub suites_rated: u32,
    pub registered_at: Stamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewerEntry {
    pub id: ParticipantId,
    pub score: f64,
    pub reviews: u32,
    pub registered_at: Stamp,
}

/// Evaluation-mode metadata shown next to every model score.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub immediate_records: u32,
    pub cohort_records: u32,
    pub cohorts: Vec<CohortId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: ModelId,
    pub score: ModelScore,
    pub status: ScoreStatus,
    pub modes: ModeSummary,
    pub registered_at: Stamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamBoard {
    pub stream: StreamId,
    pub entries: Vec<ModelEntry>,
}

/// Unweighted mean of a model's ranked per-stream scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossStreamEntry {
    pub id: ModelId,
    pub unweighted_stream_mean: ModelScore,
    pub streams_ranked: u32,
    pub status: ScoreStatus,
    pub registered_at: Stamp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaderboards {
    pub contributors: Vec<ContributorEntry>,
    pub reviewers: Vec<ReviewerEntry>,
    pub models: Vec<StreamBoard>,
    pub models_cross_stream: Vec<CrossStreamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardExport {
    pub format: String,
    pub version: u32,
    pub generated_at: Stamp,
    pub boards: Leaderboards,
}

impl LeaderboardExport {
    pub fn new(generated_at: Stamp, boards: Leaderboards) -> Self {
        Self {
            format: EXPORT_FORMAT.into(),
            version: EXPORT_VERSION,
            generated_at,
            boards,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("export is plain data") + "\n"
    }

    pub fn hash(&self) -> Digest {
        sha256(self.to_text().as_bytes())
    }
}

fn board_order(a: (Option<f64>, Stamp, &[u8]), b: (Option<f64>, Stamp, &[u8])) -> Ordering {
    let by_score = match (a.0, b.0) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_score.then(a.1.cmp(&b.1)).then(a.2.cmp(b.2))
}

/// Sorts raw standings into the three boards and derives the cross-stream
/// model summary.
pub fn build_leaderboards(
    mut contributors: Vec<ContributorEntry>,
    mut reviewers: Vec<ReviewerEntry>,
    per_stream: BTreeMap<StreamId, Vec<ModelEntry>>,
) -> Leaderboards {
    contributors.sort_by(|a, b| {
        board_order((Some(a.score), a.registered_at, &a.id.0), (Some(b.score), b.registered_at, &b.id.0))
    });
    reviewers.sort_by(|a, b| {
        board_order((Some(a.score), a.registered_at, &a.id.0), (Some(b.score), b.registered_at, &b.id.0))
    });

    let mut cross: BTreeMap<ModelId, (Vec<f64>, ScoreStatus, Stamp)> = BTreeMap::new();
    let mut models = Vec::with_capacity(per_stream.len());
    for (stream, mut entries) in per_stream {
        entries.sort_by(|a, b| {
            board_order(
                (a.score.value(), a.registered_at, &a.id.0),
                (b.score.value(), b.registered_at, &b.id.0),
            )
        });
        for e in &entries {
            let slot = cross
                .entry(e.id)
                .or_insert_with(|| (Vec::new(), e.status, e.registered_at));
            if let Some(v) = e.score.value() {
                slot.0.push(v);
            }
        }
        models.push(StreamBoard { stream, entries });
    }
    let mut models_cross_stream: Vec<CrossStreamEntry> = cross
        .into_iter()
        .map(|(id, (vals, status, registered_at))| CrossStreamEntry {
            id,
            unweighted_stream_mean: if vals.is_empty() {
                ModelScore::Unranked
            } else {
                ModelScore::Ranked(compensated_sum(vals.iter().copied()) / vals.len() as f64)
            },
            streams_ranked: vals.len() as u32,
            status,
            registered_at,
        })
        .collect();
    models_cross_stream.sort_by(|a, b| {
        board_order(
            (a.unweighted_stream_mean.value(), a.registered_at, &a.id.0),
            (b.unweighted_stream_mean.value(), b.registered_at, &b.id.0),
        )
    });

    Leaderboards {
        contributors,
        reviewers,
        models,
        models_cross_stream,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(i: u8, score: ModelScore, reg: u64) -> ModelEntry {
        ModelEntry {
            id: ModelId([i; 32]),
            score,
            status: ScoreStatus::Preliminary,
            modes: ModeSummary::default(),
            registered_at: Stamp::new(0, reg),
        }
    }

    #[test]
    fn empty_state_gives_empty_boards() {
        let b = build_leaderboards(vec![], vec![], BTreeMap::new());
        assert_eq!(b, Leaderboards::default());
    }

    #[test]
    fn models_sorted_descending_unranked_last() {
        let s = StreamId::named("s");
        let mut per = BTreeMap::new();
        per.insert(
            s,
            vec![
                model(1, ModelScore::Unranked, 0),
                model(2, ModelScore::Ranked(0.5), 1),
                model(3, ModelScore::Ranked(0.8), 2),
            ],
        );
        let b = build_leaderboards(vec![], vec![], per);
        let scores: Vec<_> = b.models[0].entries.iter().map(|e| e.score).collect();
        assert_eq!(
            scores,
            vec![ModelScore::Ranked(0.8), ModelScore::Ranked(0.5), ModelScore::Unranked]
        );
        assert_eq!(b.models_cross_stream.len(), 3);
        assert_eq!(b.models_cross_stream[2].streams_ranked, 0);
    }

    #[test]
    fn contributor_tie_goes_to_earlier_registrant() {
        let entry = |i: u8, seq: u64| ContributorEntry {
            id: ParticipantId([i; 32]),
            score: 3.0,
            suites_rated: 1,
            registered_at: Stamp::new(0, seq),
        };
        let b = build_leaderboards(vec![entry(1, 9), entry(2, 4)], vec![], BTreeMap::new());
        assert_eq!(b.contributors[0].id, ParticipantId([2; 32]));
    }

    #[test]
    fn export_hash_is_stable() {
        let e = LeaderboardExport::new(Stamp::new(1, 2), Leaderboards::default());
        assert_eq!(e.hash(), e.clone().hash());
        assert!(e.to_text().starts_with("{\n  \"format\": \"proctor.leaderboards\""));
    }
}
