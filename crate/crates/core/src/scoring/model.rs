use serde::{Deserialize, Serialize};

use super::stats::compensated_sum;
use crate::domain::Stamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelScore {
    Ranked(f64),
    Unranked,
}

impl ModelScore {
    pub fn value(self) -> Option<f64> {
        match self {
            ModelScore::Ranked(v) => Some(v),
            ModelScore::Unranked => None,
        }
    }
}

/// One weighted suite score as seen by the model aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedScore {
    pub weight: f64,
    pub score: f64,
    pub suite_published_at: Option<Stamp>,
}

/// Weighted mean `sum(w s) / sum(w)` over records that pass the temporal
/// fairness filter: a suite published before the model registered
/// contributes nothing.
pub fn model_score(records: &[WeightedScore], registered_at: Stamp) -> ModelScore {
    let eligible: Vec<&WeightedScore> = records
        .iter()
        .filter(|r| r.suite_published_at.is_none_or(|p| p >= registered_at))
        .collect();
    let den = compensated_sum(eligible.iter().map(|r| r.weight));
    if den <= 0.0 || !den.is_finite() {
        return ModelScore::Unranked;
    }
    let num = compensated_sum(eligible.iter().map(|r| r.weight * r.score));
    let (lo, hi) = eligible
        .iter()
        .filter(|r| r.weight > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.score), hi.max(r.score))
        });
    ModelScore::Ranked((num / den).clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(weight: f64, score: f64) -> WeightedScore {
        WeightedScore {
            weight,
            score,
            suite_published_at: None,
        }
    }

    #[test]
    fn examples() {
        let t = Stamp::default();
        assert_eq!(model_score(&[ws(1.7, 0.8)], t), ModelScore::Ranked(0.8));
        assert_eq!(model_score(&[ws(1.0, 1.0), ws(1.0, 0.0)], t), ModelScore::Ranked(0.5));
        assert_eq!(model_score(&[ws(0.0, 1.0), ws(0.0, 0.0)], t), ModelScore::Unranked);
        assert_eq!(model_score(&[], t), ModelScore::Unranked);
    }

    #[test]
    fn published_before_registration_is_ignored() {
        let reg = Stamp::new(10, 100);
        let stale = WeightedScore {
            weight: 5.0,
            score: 1.0,
            suite_published_at: Some(Stamp::new(9, 90)),
        };
        let later = WeightedScore {
            suite_published_at: Some(Stamp::new(11, 120)),
            ..stale
        };
        let base = [ws(1.0, 0.2)];
        assert_eq!(model_score(&[base[0], stale], reg), model_score(&base, reg));
        assert_ne!(model_score(&[base[0], later], reg), model_score(&base, reg));
    }
}
