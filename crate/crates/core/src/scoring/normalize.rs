//! Anchor-model linking of cohort scores.
//!
//! The first cohort (by id) is the reference scale. Every other cohort gets
//! an affine map fitted by least squares so its anchor scores land on the
//! reference cohort's anchor scores. With a single anchor, or anchors of
//! equal score, the fit degenerates to a pure shift. A fitted slope that is
//! not positive is replaced by a shift so within-cohort order is preserved.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::compensated_sum;
use super::ScoringError;
use crate::domain::{CohortId, ModelId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub shift: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap { scale: 1.0, shift: 0.0 };

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub reference: CohortId,
    pub anchors: BTreeSet<ModelId>,
    pub transforms: BTreeMap<CohortId, AffineMap>,
    /// Mean of a model's mapped scores over the cohorts it appears in.
    pub scores: BTreeMap<ModelId, f64>,
}

fn fit(pairs: &[(f64, f64)]) -> AffineMap {
    let n = pairs.len() as f64;
    let mx = compensated_sum(pairs.iter().map(|p| p.0)) / n;
    let my = compensated_sum(pairs.iter().map(|p| p.1)) / n;
    let sxx = compensated_sum(pairs.iter().map(|p| (p.0 - mx).powi(2)));
    let sxy = compensated_sum(pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let shift_only = AffineMap {
        scale: 1.0,
        shift: my - mx,
    };
    if pairs.len() < 2 || sxx <= 1e-24 {
        return shift_only;
    }
    let scale = sxy / sxx;
    if !(scale.is_finite() && scale > 0.0) {
        return shift_only;
    }
    AffineMap {
        scale,
        shift: my - scale * mx,
    }
}

pub fn normalize_across_cohorts(
    cohort_scores: &BTreeMap<CohortId, Vec<(ModelId, f64)>>,
    anchors: &BTreeSet<ModelId>,
) -> Result<Normalization, ScoringError> {
    let Some((&reference, ref_scores)) = cohort_scores.iter().next() else {
        return Err(ScoringError::NoAnchors);
    };
    let lookup: BTreeMap<CohortId, BTreeMap<ModelId, f64>> = cohort_scores
        .iter()
        .map(|(c, v)| (*c, v.iter().copied().collect()))
        .collect();
    let linked: BTreeSet<ModelId> = anchors
        .iter()
        .filter(|a| lookup.values().all(|m| m.contains_key(a)))
        .copied()
        .collect();
    if cohort_scores.len() > 1 && linked.is_empty() {
        return Err(ScoringError::NoAnchors);
    }

    let ref_map: BTreeMap<ModelId, f64> = ref_scores.iter().copied().collect();
    let mut transforms = BTreeMap::new();
    for (cohort, scores) in &lookup {
        let map = if *cohort == reference {
            AffineMap::IDENTITY
        } else {
            let pairs: Vec<(f64, f64)> = linked.iter().map(|a| (scores[a], ref_map[a])).collect();
            fit(&pairs)
        };
        transforms.insert(*cohort, map);
    }

    let mut acc: BTreeMap<ModelId, Vec<f64>> = BTreeMap::new();
    for (cohort, scores) in cohort_scores {
        let map = transforms[cohort];
        for &(m, x) in scores {
            acc.entry(m).or_default().push(map.apply(x));
        }
    }
    let scores = acc
        .into_iter()
        .map(|(m, xs)| (m, compensated_sum(xs.iter().copied()) / xs.len() as f64))
        .collect();
    Ok(Normalization {
        reference,
        anchors: linked,
        transforms,
        scores,
    })
}
