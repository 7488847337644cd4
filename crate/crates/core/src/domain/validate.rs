use serde::{Deserialize, Serialize};

use super::SuitePayload;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EmptyPrompt { index: usize },
    MalformedScorer { index: usize, reason: String },
    ItemCount { count: usize, max: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EmptyPrompt { index } => write!(f, "empty prompt at index {index}"),
            Violation::MalformedScorer { index, reason } => {
                write!(f, "malformed scorer at index {index}: {reason}")
            }
            Violation::ItemCount { count, max } => {
                write!(f, "item count {count} outside 1..={max}")
            }
        }
    }
}

/// Violations are data: an empty report means the suite passes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

pub fn validate_test_suite(payload: &SuitePayload, max_items: usize) -> ValidationReport {
    let mut violations = Vec::new();
    let n = payload.items.len();
    if n == 0 || n > max_items {
        violations.push(Violation::ItemCount { count: n, max: max_items });
    }
    for (index, item) in payload.items.iter().enumerate() {
        if item.prompt.trim().is_empty() {
            violations.push(Violation::EmptyPrompt { index });
        }
        if let Err(super::ScorerError::MalformedRule(reason)) = item.scorer.check() {
            violations.push(Violation::MalformedScorer { index, reason });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ScorerRule, TestItem};

    fn item(prompt: &str, scorer: ScorerRule) -> TestItem {
        TestItem {
            prompt: prompt.into(),
            reference_answer: "a".into(),
            scorer,
        }
    }

    #[test]
    fn three_good_items_pass() {
        let p = SuitePayload {
            items: vec![
                item("q1", ScorerRule::ExactMatch),
                item("q2", ScorerRule::NormalizedMatch),
                item("q3", ScorerRule::NumericTolerance { tolerance: 0.5 }),
            ],
        };
        assert!(validate_test_suite(&p, 256).passed());
    }

    #[test]
    fn empty_prompt_flagged_with_index() {
        let p = SuitePayload {
            items: vec![item("q1", ScorerRule::ExactMatch), item("", ScorerRule::ExactMatch)],
        };
        assert_eq!(validate_test_suite(&p, 256).messages(), vec!["empty prompt at index 1"]);
    }

    #[test]
    fn negative_tolerance_flagged() {
        let p = SuitePayload {
            items: vec![item("q", ScorerRule::NumericTolerance { tolerance: -0.1 })],
        };
        let report = validate_test_suite(&p, 256);
        assert_eq!(report.violations.len(), 1);
        assert!(report.messages()[0].contains("negative tolerance"));
    }

    #[test]
    fn item_count_bounds() {
        let empty = SuitePayload { items: vec![] };
        assert!(!validate_test_suite(&empty, 256).passed());
        let many = SuitePayload {
            items: (0..5).map(|i| item(&format!("q{i}"), ScorerRule::ExactMatch)).collect(),
        };
        assert!(!validate_test_suite(&many, 4).passed());
        assert!(validate_test_suite(&many, 5).passed());
    }
}
