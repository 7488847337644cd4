//! Synchronized cohort windows whose close times follow `origin + 2^i` days.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{CohortId, ModelId, StreamId, TestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowState {
    Open,
    Closed,
    Evaluated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortWindow {
    pub id: CohortId,
    pub stream: StreamId,
    pub index: u32,
    /// Logical tick at which the window closes.
    pub closes_at: u64,
    pub registered: BTreeSet<ModelId>,
    /// Sealed at close; empty until then.
    pub test_set_hold: BTreeSet<TestId>,
    pub state: WindowState,
}

/// Every (model, suite) pair a closing window must run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationOrder {
    pub cohort: CohortId,
    pub models: Vec<ModelId>,
    pub tests: Vec<TestId>,
}

impl EvaluationOrder {
    pub fn pairs(&self) -> impl Iterator<Item = (ModelId, TestId)> + '_ {
        self.models
            .iter()
            .flat_map(move |m| self.tests.iter().map(move |t| (*m, *t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CohortError {
    #[error("window closes at tick {closes_at}, now is {now}")]
    NotDue { closes_at: u64, now: u64 },
    #[error("window closed with no registered models")]
    EmptyCohort,
    #[error("window is not open")]
    NotOpen,
}

/// Windows `0..=max_index` closing at `origin + 2^i * ticks_per_day`.
pub fn next_windows(
    stream: StreamId,
    origin: u64,
    max_index: u32,
    ticks_per_day: u64,
) -> Vec<CohortWindow> {
    (0..=max_index)
        .map(|i| CohortWindow {
            id: CohortId::for_window(&stream, i),
            stream,
            index: i,
            closes_at: origin.saturating_add(
                1u64.checked_shl(i)
                    .unwrap_or(u64::MAX)
                    .saturating_mul(ticks_per_day),
            ),
            registered: BTreeSet::new(),
            test_set_hold: BTreeSet::new(),
            state: WindowState::Open,
        })
        .collect()
}

/// Index of the open window with the smallest close time `>= now`.
pub fn earliest_open_window(windows: &[CohortWindow], now: u64) -> Option<usize> {
    windows
        .iter()
        .enumerate()
        .filter(|(_, w)| w.state == WindowState::Open && w.closes_at >= now)
        .min_by_key(|(_, w)| w.closes_at)
        .map(|(i, _)| i)
}

impl CohortWindow {
    /// Closes the window, sealing the current hold pool as its test set.
    /// With no registered models the window closes empty and the pool is
    /// left untouched for the next window.
    pub fn close(
        &mut self,
        now: u64,
        hold_pool: &BTreeSet<TestId>,
    ) -> Result<EvaluationOrder, CohortError> {
        if self.state != WindowState::Open {
            return Err(CohortError::NotOpen);
        }
        if now < self.closes_at {
            return Err(CohortError::NotDue {
                closes_at: self.closes_at,
                now,
            });
        }
        self.state = WindowState::Closed;
        if self.registered.is_empty() {
            return Err(CohortError::EmptyCohort);
        }
        self.test_set_hold = hold_pool.clone();
        Ok(EvaluationOrder {
            cohort: self.id,
            models: self.registered.iter().copied().collect(),
            tests: self.test_set_hold.iter().copied().collect(),
        })
    }

    pub fn mark_evaluated(&mut self) {
        self.state = WindowState::Evaluated;
    }
}
