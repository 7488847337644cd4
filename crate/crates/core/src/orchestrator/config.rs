//! Protocol configuration: TOML file plus `PROCTOR_*` environment overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::{CredentialKind, Role};
use crate::integrity::{sha256, Digest};

/// Prefix of environment variables that override scalar config fields,
/// e.g. `PROCTOR_CAPACITY=16` or `PROCTOR_HOLD_FRACTION=0.5`.
pub const ENV_PREFIX: &str = "PROCTOR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonusTable {
    pub edu_email: u32,
    pub scholar_profile: u32,
    pub code_host_profile: u32,
}

impl Default for BonusTable {
    fn default() -> Self {
        Self {
            edu_email: 2,
            scholar_profile: 3,
            code_host_profile: 1,
        }
    }
}

impl BonusTable {
    pub fn points(&self, kind: CredentialKind) -> u32 {
        match kind {
            CredentialKind::EduEmail => self.edu_email,
            CredentialKind::ScholarProfile => self.scholar_profile,
            CredentialKind::CodeHostProfile => self.code_host_profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Contributors below this reputation are removed.
    pub contributor_min: f64,
    /// Reviewers below this reputation are removed once they have at least
    /// `reviewer_min_reviews` reviews.
    pub reviewer_min: f64,
    pub reviewer_min_reviews: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            contributor_min: -3.0,
            reviewer_min: -0.5,
            reviewer_min_reviews: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StakeMinimums {
    pub contributor: u64,
    pub reviewer: u64,
    pub model_creator: u64,
}

impl Default for StakeMinimums {
    fn default() -> Self {
        Self {
            contributor: 100,
            reviewer: 50,
            model_creator: 0,
        }
    }
}

impl StakeMinimums {
    pub fn for_role(&self, role: Role) -> u64 {
        match role {
            Role::Contributor => self.contributor,
            Role::Reviewer => self.reviewer,
            Role::ModelCreator => self.model_creator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 100,
            max_delay_ms: 2000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): doubling from the base,
    /// capped.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        self.base_delay_ms
            .saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX))
            .min(self.max_delay_ms)
    }
}

/// Extension point for time decay of model scores. Only `Disabled` is
/// implemented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreDecay {
    #[default]
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub streams: Vec<String>,
    /// Live reservoir capacity per stream.
    pub capacity: usize,
    pub hold_fraction: f64,
    /// Routing falls back to the immediate lane while the hold pool holds
    /// this share of the reservoir or more.
    pub max_hold_share: f64,
    pub max_items: usize,
    pub min_reviews: usize,
    pub weight_floor: f64,
    /// Softmax temperature for reputation-prioritized reviewer sampling.
    pub reviewer_temperature: f64,
    pub review_deadline_days: u64,
    pub ticks_per_day: u64,
    pub reveal_fraction: f64,
    /// Windows `0..=max_window_index` are scheduled at a time; a new batch
    /// starts from the last close when they run out.
    pub max_window_index: u32,
    pub bonus: BonusTable,
    pub thresholds: Thresholds,
    pub min_stake: StakeMinimums,
    pub retry: RetryPolicy,
    pub score_decay: ScoreDecay,
    /// Absolute tolerance when comparing a reviewer's rescored item against
    /// the logged score.
    pub rescore_tolerance: f64,
    /// JSON file of external benchmark scores for cross-validation.
    pub external_benchmark: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            streams: vec!["general".into()],
            capacity: 64,
            hold_fraction: 0.3,
            max_hold_share: 0.5,
            max_items: 256,
            min_reviews: 3,
            weight_floor: 0.05,
            reviewer_temperature: 0.5,
            review_deadline_days: 2,
            ticks_per_day: 10,
            reveal_fraction: 0.2,
            max_window_index: 6,
            bonus: BonusTable::default(),
            thresholds: Thresholds::default(),
            min_stake: StakeMinimums::default(),
            retry: RetryPolicy::default(),
            score_decay: ScoreDecay::Disabled,
            rescore_tolerance: 1e-9,
            external_benchmark: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad value for {key}: {reason}")]
    Value { key: String, reason: String },
}

fn bad(key: &str, reason: &str) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        reason: reason.into(),
    }
}

impl ProtocolConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `PROCTOR_*` overrides from `vars`. Unknown keys with the
    /// prefix are rejected so typos do not pass silently.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| bad(key, "unparsable"))
        }
        for (key, v) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let v = v.trim();
            match name {
                "STREAMS" => {
                    self.streams = v.split(',').map(|s| s.trim().to_string()).collect();
                }
                "CAPACITY" => self.capacity = parse(&key, v)?,
                "HOLD_FRACTION" => self.hold_fraction = parse(&key, v)?,
                "MAX_HOLD_SHARE" => self.max_hold_share = parse(&key, v)?,
                "MAX_ITEMS" => self.max_items = parse(&key, v)?,
                "MIN_REVIEWS" => self.min_reviews = parse(&key, v)?,
                "WEIGHT_FLOOR" => self.weight_floor = parse(&key, v)?,
                "REVIEWER_TEMPERATURE" => self.reviewer_temperature = parse(&key, v)?,
                "REVIEW_DEADLINE_DAYS" => self.review_deadline_days = parse(&key, v)?,
                "TICKS_PER_DAY" => self.ticks_per_day = parse(&key, v)?,
                "REVEAL_FRACTION" => self.reveal_fraction = parse(&key, v)?,
                "MAX_WINDOW_INDEX" => self.max_window_index = parse(&key, v)?,
                "EXTERNAL_BENCHMARK" => self.external_benchmark = Some(PathBuf::from(v)),
                // Consumed by the CLI, not part of the protocol config.
                "SERVER" | "KEY" | "FORMAT" | "DATA_DIR" | "LISTEN" | "BEACON_SEED" | "LOG" => {}
                _ => return Err(bad(&key, "unknown override")),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.streams.is_empty() || self.streams.iter().any(|s| s.trim().is_empty()) {
            return Err(bad("streams", "need at least one non-empty stream name"));
        }
        let mut names = self.streams.clone();
        names.sort();
        names.dedup();
        if names.len() != self.streams.len() {
            return Err(bad("streams", "duplicate stream name"));
        }
        if self.capacity == 0 {
            return Err(bad("capacity", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.hold_fraction) {
            return Err(bad("hold_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_hold_share) {
            return Err(bad("max_hold_share", "must lie in [0, 1]"));
        }
        if self.max_items == 0 {
            return Err(bad("max_items", "must be positive"));
        }
        if self.min_reviews == 0 {
            return Err(bad("min_reviews", "must be positive"));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(bad("weight_floor", "must be positive"));
        }
        if !(self.reviewer_temperature > 0.0 && self.reviewer_temperature.is_finite()) {
            return Err(bad("reviewer_temperature", "must be positive"));
        }
        if self.ticks_per_day == 0 {
            return Err(bad("ticks_per_day", "must be positive"));
        }
        if !(self.reveal_fraction > 0.0 && self.reveal_fraction <= 1.0) {
            return Err(bad("reveal_fraction", "must lie in (0, 1]"));
        }
        if self.max_window_index > 40 {
            return Err(bad("max_window_index", "at most 40"));
        }
        if self.retry.attempts == 0 {
            return Err(bad("retry.attempts", "must be positive"));
        }
        if self.rescore_tolerance.is_nan() || self.rescore_tolerance < 0.0 {
            return Err(bad("rescore_tolerance", "must be non-negative"));
        }
        Ok(())
    }

    pub fn hash(&self) -> Digest {
        sha256(&crate::canonical::to_bytes(self))
    }

    pub fn deadline_ticks(&self) -> u64 {
        self.review_deadline_days.saturating_mul(self.ticks_per_day)
    }
}
