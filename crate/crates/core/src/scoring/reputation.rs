use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{compensated_sum, pearson};
use super::ScoringError;
use crate::domain::{ParticipantId, Stamp, StreamId, TestId};

/// Contributor reputation: sum of finalized suite qualities plus bonuses.
pub fn contributor_score(qualities: &[f64], bonuses: i64) -> f64 {
    compensated_sum(qualities.iter().copied()) + bonuses as f64
}

/// Pearson correlation between a reviewer's ratings and the consensus
/// qualities of the same suites. Zero variance on either side yields 0.
pub fn reviewer_score(per_test: &[(f64, f64)]) -> Result<f64, ScoringError> {
    if per_test.len() < 2 {
        return Err(ScoringError::InsufficientHistory { got: per_test.len() });
    }
    let (given, consensus): (Vec<f64>, Vec<f64>) = per_test.iter().copied().unzip();
    Ok(pearson(&given, &consensus).expect("length checked"))
}

/// Reviewer reputation over a full history: one Pearson per stream, then
/// the unweighted mean over streams with enough history. Neutral (0) when
/// no stream qualifies.
pub fn reviewer_reputation(history: &[(StreamId, f64, f64)]) -> f64 {
    let mut by_stream: BTreeMap<StreamId, Vec<(f64, f64)>> = BTreeMap::new();
    for &(stream, given, q) in history {
        by_stream.entry(stream).or_default().push((given, q));
    }
    let per_stream: Vec<f64> = by_stream
        .values()
        .filter_map(|pairs| reviewer_score(pairs).ok())
        .collect();
    if per_stream.is_empty() {
        0.0
    } else {
        compensated_sum(per_stream.iter().copied()) / per_stream.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerBoard {
    Contributor,
    Reviewer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerCause {
    Bonus,
    ReviewCompletion(TestId),
    Slash(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub at: Stamp,
    pub participant: ParticipantId,
    pub board: LedgerBoard,
    pub delta: f64,
    pub cause: LedgerCause,
}

/// Contributor and reviewer reputations with a full change history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReputationLedger {
    pub contributor: BTreeMap<ParticipantId, f64>,
    pub reviewer: BTreeMap<ParticipantId, f64>,
    pub history: Vec<LedgerEntry>,
}

impl ReputationLedger {
    pub fn contributor_rep(&self, id: &ParticipantId) -> f64 {
        self.contributor.get(id).copied().unwrap_or(0.0)
    }

    pub fn reviewer_rep(&self, id: &ParticipantId) -> f64 {
        self.reviewer.get(id).copied().unwrap_or(0.0)
    }

    /// Sets a reputation, recording the delta. Unchanged values that already
    /// exist are not recorded.
    pub fn set(
        &mut self,
        board: LedgerBoard,
        participant: ParticipantId,
        value: f64,
        at: Stamp,
        cause: LedgerCause,
    ) {
        let map = match board {
            LedgerBoard::Contributor => &mut self.contributor,
            LedgerBoard::Reviewer => &mut self.reviewer,
        };
        let old = map.insert(participant, value);
        if old == Some(value) {
            return;
        }
        self.history.push(LedgerEntry {
            at,
            participant,
            board,
            delta: value - old.unwrap_or(0.0),
            cause,
        });
    }
}
