//! Quality consensus, test weights, reputations and the three leaderboards.
//!
//! All functions here are pure over immutable inputs; ledger mutation lives
//! in the orchestrator.

mod leaderboard;
mod model;
mod normalize;
mod quality;
mod reputation;
pub mod stats;

pub use leaderboard::{
    build_leaderboards, ContributorEntry, CrossStreamEntry, LeaderboardExport, Leaderboards,
    ModeSummary, ModelEntry, ReviewerEntry, StreamBoard, EXPORT_FORMAT, EXPORT_VERSION,
};
pub use model::{model_score, ModelScore, WeightedScore};
pub use normalize::{normalize_across_cohorts, AffineMap, Normalization};
pub use quality::{aggregate_quality, test_weight, weighted_quality, QualityConsensus};
pub use reputation::{
    contributor_score, reviewer_reputation, reviewer_score, LedgerBoard, LedgerCause,
    LedgerEntry, ReputationLedger,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoringError {
    #[error("{got} valid reviews, need at least {need}")]
    InsufficientReviews { got: usize, need: usize },
    #[error("{got} rated tests, need at least 2")]
    InsufficientHistory { got: usize },
    #[error("cohorts share no anchor model")]
    NoAnchors,
}
