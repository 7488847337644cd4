use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::compensated_sum;
use super::ScoringError;
use crate::domain::{ParticipantId, Rating, Review, TestId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityConsensus {
    pub test_id: TestId,
    /// (rating, reviewer reputation at the time of aggregation).
    pub reviews: Vec<(Rating, f64)>,
    pub q_bar: f64,
}

/// Reputation-weighted mean rating with weights `max(floor, rho)`.
pub fn weighted_quality(reviews: &[(Rating, f64)], weight_floor: f64) -> f64 {
    let weights: Vec<f64> = reviews
        .iter()
        .map(|(_, rho)| if rho.is_nan() { weight_floor } else { rho.max(weight_floor) })
        .collect();
    let num = compensated_sum(reviews.iter().zip(&weights).map(|((r, _), w)| w * r.as_f64()));
    let den = compensated_sum(weights.iter().copied());
    (num / den).clamp(Rating::MIN as f64, Rating::MAX as f64)
}

/// Consensus quality of one suite. Reviewers missing from `reputations`
/// count as neutral (reputation 0).
pub fn aggregate_quality(
    test_id: TestId,
    reviews: &[Review],
    reputations: &BTreeMap<ParticipantId, f64>,
    weight_floor: f64,
    min_reviews: usize,
) -> Result<QualityConsensus, ScoringError> {
    if reviews.len() < min_reviews {
        return Err(ScoringError::InsufficientReviews {
            got: reviews.len(),
            need: min_reviews,
        });
    }
    let pairs: Vec<(Rating, f64)> = reviews
        .iter()
        .map(|r| (r.rating, reputations.get(&r.reviewer).copied().unwrap_or(0.0)))
        .collect();
    Ok(QualityConsensus {
        test_id,
        q_bar: weighted_quality(&pairs, weight_floor),
        reviews: pairs,
    })
}

/// Test weight: `max{0, 0.7 q + 0.3 min(2, rho_c / 100)}`.
pub fn test_weight(q_bar: f64, contributor_reputation: f64) -> f64 {
    (0.7 * q_bar + 0.3 * (contributor_reputation / 100.0).min(2.0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrity::Signature;
    use crate::domain::Stamp;

    fn review(reviewer: u8, rating: i64) -> Review {
        Review {
            test_id: TestId::default(),
            reviewer: ParticipantId([reviewer; 32]),
            rating: Rating::new(rating).unwrap(),
            rationale: String::new(),
            signature: Signature::default(),
            submitted_at: Stamp::default(),
        }
    }

    fn reps(values: &[(u8, f64)]) -> BTreeMap<ParticipantId, f64> {
        values.iter().map(|&(i, r)| (ParticipantId([i; 32]), r)).collect()
    }

    #[test]
    fn unanimous() {
        let rs = [review(1, 2), review(2, 2), review(3, 2)];
        let c = aggregate_quality(TestId::default(), &rs, &reps(&[(1, 0.3), (2, 0.9), (3, 0.5)]), 0.05, 3)
            .unwrap();
        assert_eq!(c.q_bar, 2.0);
    }

    #[test]
    fn equal_weights_give_plain_mean() {
        let rs = [review(1, -1), review(2, 2), review(3, 2)];
        let c = aggregate_quality(TestId::default(), &rs, &reps(&[(1, 1.0), (2, 1.0), (3, 1.0)]), 0.05, 3)
            .unwrap();
        assert!((c.q_bar - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_reviews_insufficient() {
        let rs = [review(1, -1), review(2, 2)];
        assert_eq!(
            aggregate_quality(TestId::default(), &rs, &BTreeMap::new(), 0.05, 3),
            Err(ScoringError::InsufficientReviews { got: 2, need: 3 })
        );
    }

    #[test]
    fn negative_reputation_is_floored_not_inverted() {
        // weights 0.05, 1.0, 1.0 -> (0.05 * -1 + 2 + 2) / 2.05
        let rs = [review(1, -1), review(2, 2), review(3, 2)];
        let c = aggregate_quality(TestId::default(), &rs, &reps(&[(1, -0.9), (2, 1.0), (3, 1.0)]), 0.05, 3)
            .unwrap();
        assert!((c.q_bar - 3.95 / 2.05).abs() < 1e-12);
        // Unknown reviewers are neutral and get the floor weight.
        let c = aggregate_quality(TestId::default(), &rs, &BTreeMap::new(), 0.05, 3).unwrap();
        assert!((c.q_bar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_examples() {
        assert!((test_weight(2.0, 200.0) - 2.0).abs() < 1e-15);
        assert_eq!(test_weight(-1.0, 0.0), 0.0);
        assert!((test_weight(0.0, 50.0) - 0.15).abs() < 1e-15);
    }
}
