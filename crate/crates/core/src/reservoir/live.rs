use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{Lane, Stamp, StreamId, TestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveEntry {
    pub test_id: TestId,
    pub admitted_at: Stamp,
    pub lane: Lane,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReservoirError {
    #[error("no live suite is eligible for retirement")]
    NothingEligible,
    #[error("suite {0} already tracked by this reservoir")]
    Duplicate(TestId),
    #[error("suite {0} is not live")]
    NotLive(TestId),
    #[error("suite {0} is not awaiting publication")]
    NotRetired(TestId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admission {
    pub lane: Lane,
    /// The reservoir was full and had to retire a suite first.
    pub capacity_pressure: bool,
    pub retired: Option<TestId>,
}

/// Routes a suite to the cohort hold when `draw < hold_fraction`, where
/// `draw` is uniform in `[0, 1)`.
pub fn route_lane(draw: f64, hold_fraction: f64) -> Lane {
    if draw < hold_fraction {
        Lane::CohortHold
    } else {
        Lane::Immediate
    }
}

/// Per-stream reservoir of at most `capacity` live suites. A suite id is in
/// at most one of `live`, `retired_queue`, `published`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservoir {
    pub stream: StreamId,
    pub capacity: usize,
    /// Ordered by admission.
    pub live: Vec<LiveEntry>,
    pub retired_queue: Vec<TestId>,
    pub published: BTreeSet<TestId>,
}

impl Reservoir {
    pub fn new(stream: StreamId, capacity: usize) -> Self {
        assert!(capacity > 0, "reservoir capacity must be positive");
        Self {
            stream,
            capacity,
            live: Vec::new(),
            retired_queue: Vec::new(),
            published: BTreeSet::new(),
        }
    }

    pub fn is_full(&self) -> bool {
        self.live.len() >= self.capacity
    }

    pub fn is_live(&self, id: &TestId) -> bool {
        self.live.iter().any(|e| e.test_id == *id)
    }

    pub fn live_entry(&self, id: &TestId) -> Option<&LiveEntry> {
        self.live.iter().find(|e| e.test_id == *id)
    }

    pub fn tracks(&self, id: &TestId) -> bool {
        self.is_live(id) || self.retired_queue.contains(id) || self.published.contains(id)
    }

    /// Which suite `retire_one` would pick: the oldest zero-weight eligible
    /// suite if any, else the oldest eligible suite. Suites without a
    /// finalized weight are never eligible.
    pub fn retirement_candidate<F>(
        &self,
        weights: &BTreeMap<TestId, Option<f64>>,
        eligible: F,
    ) -> Option<TestId>
    where
        F: Fn(&TestId) -> bool,
    {
        let candidates = self.live.iter().filter(|e| {
            eligible(&e.test_id) && weights.get(&e.test_id).copied().flatten().is_some()
        });
        let mut oldest: Option<&LiveEntry> = None;
        let mut oldest_zero: Option<&LiveEntry> = None;
        for e in candidates {
            let w = weights[&e.test_id].expect("filtered");
            if oldest.is_none_or(|o| e.admitted_at < o.admitted_at) {
                oldest = Some(e);
            }
            if w == 0.0 && oldest_zero.is_none_or(|o| e.admitted_at < o.admitted_at) {
                oldest_zero = Some(e);
            }
        }
        oldest_zero.or(oldest).map(|e| e.test_id)
    }

    pub fn retire_one<F>(
        &mut self,
        weights: &BTreeMap<TestId, Option<f64>>,
        eligible: F,
    ) -> Result<TestId, ReservoirError>
    where
        F: Fn(&TestId) -> bool,
    {
        let id = self
            .retirement_candidate(weights, eligible)
            .ok_or(ReservoirError::NothingEligible)?;
        self.retire(&id)?;
        Ok(id)
    }

    /// Moves a specific live suite to the publication queue.
    pub fn retire(&mut self, id: &TestId) -> Result<(), ReservoirError> {
        let pos = self
            .live
            .iter()
            .position(|e| e.test_id == *id)
            .ok_or(ReservoirError::NotLive(*id))?;
        self.live.remove(pos);
        self.retired_queue.push(*id);
        Ok(())
    }

    /// Admits a suite on `lane`, retiring one suite first when full. On
    /// `NothingEligible` the reservoir is unchanged.
    pub fn admit<F>(
        &mut self,
        id: TestId,
        at: Stamp,
        lane: Lane,
        weights: &BTreeMap<TestId, Option<f64>>,
        eligible: F,
    ) -> Result<Admission, ReservoirError>
    where
        F: Fn(&TestId) -> bool,
    {
        if self.tracks(&id) {
            return Err(ReservoirError::Duplicate(id));
        }
        let capacity_pressure = self.is_full();
        let retired = if capacity_pressure {
            Some(self.retire_one(weights, eligible)?)
        } else {
            None
        };
        self.push_live(LiveEntry {
            test_id: id,
            admitted_at: at,
            lane,
        });
        Ok(Admission {
            lane,
            capacity_pressure,
            retired,
        })
    }

    /// Appends a live entry without capacity handling. Used by event replay,
    /// where the retirement that made room is a separate event.
    pub(crate) fn push_live(&mut self, entry: LiveEntry) {
        debug_assert!(self.live.len() < self.capacity);
        self.live.push(entry);
    }

    pub fn set_lane(&mut self, id: &TestId, lane: Lane) {
        if let Some(e) = self.live.iter_mut().find(|e| e.test_id == *id) {
            e.lane = lane;
        }
    }

    pub fn mark_published(&mut self, id: &TestId) -> Result<(), ReservoirError> {
        let pos = self
            .retired_queue
            .iter()
            .position(|t| t == id)
            .ok_or(ReservoirError::NotRetired(*id))?;
        self.retired_queue.remove(pos);
        self.published.insert(*id);
        Ok(())
    }

    /// Drops an invalidated suite from wherever it is tracked (except the
    /// published history, which is permanent).
    pub fn drop_suite(&mut self, id: &TestId) {
        self.live.retain(|e| e.test_id != *id);
        self.retired_queue.retain(|t| t != id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(i: u8) -> TestId {
        TestId([i; 32])
    }

    fn reservoir(entries: &[(u8, u64)]) -> Reservoir {
        let mut r = Reservoir::new(StreamId::named("s"), 64);
        for &(id, at) in entries {
            r.push_live(LiveEntry {
                test_id: t(id),
                admitted_at: Stamp::new(at, at),
                lane: Lane::Immediate,
            });
        }
        r
    }

    fn weights(ws: &[(u8, Option<f64>)]) -> BTreeMap<TestId, Option<f64>> {
        ws.iter().map(|&(i, w)| (t(i), w)).collect()
    }

    #[test]
    fn zero_weight_has_priority() {
        let mut r = reservoir(&[(1, 5), (2, 1)]);
        let w = weights(&[(1, Some(0.0)), (2, Some(1.2))]);
        assert_eq!(r.retire_one(&w, |_| true).unwrap(), t(1));
        assert_eq!(r.retired_queue, vec![t(1)]);
    }

    #[test]
    fn otherwise_oldest() {
        let mut r = reservoir(&[(1, 5), (2, 1)]);
        let w = weights(&[(1, Some(0.3)), (2, Some(1.2))]);
        assert_eq!(r.retire_one(&w, |_| true).unwrap(), t(2));
    }

    #[test]
    fn oldest_among_zero_weight() {
        let mut r = reservoir(&[(1, 5), (3, 2)]);
        let w = weights(&[(1, Some(0.0)), (3, Some(0.0))]);
        assert_eq!(r.retire_one(&w, |_| true).unwrap(), t(3));
    }

    #[test]
    fn nothing_eligible_leaves_state_unchanged() {
        let mut r = reservoir(&[(1, 5), (2, 1)]);
        let before = r.clone();
        let w = weights(&[(1, None), (2, Some(1.0))]);
        assert_eq!(r.retire_one(&w, |id| *id != t(2)), Err(ReservoirError::NothingEligible));
        assert_eq!(r, before);
    }

    #[test]
    fn admission_under_pressure_retires_first() {
        let mut r = Reservoir::new(StreamId::named("s"), 2);
        let w = weights(&[(1, Some(1.0)), (2, Some(1.0))]);
        r.admit(t(1), Stamp::new(0, 1), Lane::Immediate, &w, |_| true).unwrap();
        r.admit(t(2), Stamp::new(0, 2), Lane::Immediate, &w, |_| true).unwrap();
        let a = r.admit(t(3), Stamp::new(0, 3), Lane::CohortHold, &w, |_| true).unwrap();
        assert!(a.capacity_pressure);
        assert_eq!(a.retired, Some(t(1)));
        assert_eq!(r.live.len(), 2);
        assert_eq!(
            r.admit(t(1), Stamp::new(0, 4), Lane::Immediate, &w, |_| true),
            Err(ReservoirError::Duplicate(t(1)))
        );
        r.mark_published(&t(1)).unwrap();
        assert!(r.published.contains(&t(1)));
        assert!(r.mark_published(&t(1)).is_err());
    }

    #[test]
    fn routing_extremes() {
        for i in 0..100 {
            let u = i as f64 / 100.0;
            assert_eq!(route_lane(u, 0.0), Lane::Immediate);
            assert_eq!(route_lane(u, 1.0), Lane::CohortHold);
        }
    }

    proptest! {
        #[test]
        fn capacity_never_exceeded(ops in proptest::collection::vec((any::<bool>(), 0u8..40, proptest::option::of(0u8..3)), 1..200), cap in 1usize..8) {
            let mut r = Reservoir::new(StreamId::named("p"), cap);
            let mut w: BTreeMap<TestId, Option<f64>> = BTreeMap::new();
            for (k, (admit, id, weight)) in ops.into_iter().enumerate() {
                if admit {
                    w.insert(t(id), weight.map(|x| x as f64 * 0.5));
                    let _ = r.admit(t(id), Stamp::new(k as u64, k as u64), Lane::Immediate, &w, |_| true);
                } else {
                    let _ = r.retire_one(&w, |_| true);
                }
                prop_assert!(r.live.len() <= cap);
                let mut seen = BTreeSet::new();
                for e in &r.live { prop_assert!(seen.insert(e.test_id)); }
                for id in &r.retired_queue { prop_assert!(seen.insert(*id)); }
            }
        }
    }
}
