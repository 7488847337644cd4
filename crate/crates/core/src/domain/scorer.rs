//! Declarative scoring rules.
//!
//! Contributors pick one rule per item instead of shipping executable code,
//! so every score is deterministic, total and replayable. Each rule maps a
//! (reference, response) pair to a score in `[0, 1]`.

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

/// Compiled-size cap for contributor patterns.
const REGEX_SIZE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScorerRule {
    /// Byte-exact equality.
    ExactMatch,
    /// Equality after trimming, lowercasing and collapsing whitespace.
    NormalizedMatch,
    /// Both sides parse as numbers within `tolerance` of each other.
    NumericTolerance { tolerance: f64 },
    /// The whole trimmed response matches `pattern`. The reference is unused.
    RegexMatch { pattern: String },
    /// The response names choice `key` (e.g. `B`, `(b)`, `Answer: B.`).
    ChoiceKey { key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScorerError {
    #[error("malformed rule: {0}")]
    MalformedRule(String),
}

impl ScorerRule {
    pub fn check(&self) -> Result<(), ScorerError> {
        match self {
            ScorerRule::NumericTolerance { tolerance } => {
                if tolerance.is_nan() || *tolerance < 0.0 {
                    return Err(ScorerError::MalformedRule("negative tolerance".into()));
                }
            }
            ScorerRule::RegexMatch { pattern } => {
                compile(pattern)?;
            }
            ScorerRule::ChoiceKey { key } => {
                if key.trim().is_empty() || !key.trim().chars().all(char::is_alphanumeric) {
                    return Err(ScorerError::MalformedRule("choice key must be alphanumeric".into()));
                }
            }
            ScorerRule::ExactMatch | ScorerRule::NormalizedMatch => {}
        }
        Ok(())
    }
}

fn compile(pattern: &str) -> Result<regex::Regex, ScorerError> {
    RegexBuilder::new(&format!("^(?:{pattern})$"))
        .size_limit(REGEX_SIZE_LIMIT)
        .build()
        .map_err(|e| ScorerError::MalformedRule(format!("pattern does not compile: {e}")))
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn first_choice_token(response: &str) -> Option<&str> {
    let mut tokens = response
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty());
    let first = tokens.next()?;
    if first.eq_ignore_ascii_case("answer") {
        tokens.next()
    } else {
        Some(first)
    }
}

/// Scores `response` against `reference` under `rule`. Deterministic; the
/// result is always in `[0, 1]`.
pub fn run_scorer(rule: &ScorerRule, reference: &str, response: &str) -> Result<f64, ScorerError> {
    rule.check()?;
    let hit = match rule {
        ScorerRule::ExactMatch => reference == response,
        ScorerRule::NormalizedMatch => normalize(reference) == normalize(response),
        ScorerRule::NumericTolerance { tolerance } => {
            match (reference.trim().parse::<f64>(), response.trim().parse::<f64>()) {
                (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a - b).abs() <= *tolerance,
                _ => false,
            }
        }
        ScorerRule::RegexMatch { pattern } => compile(pattern)?.is_match(response.trim()),
        ScorerRule::ChoiceKey { key } => {
            first_choice_token(response).is_some_and(|t| t.eq_ignore_ascii_case(key.trim()))
        }
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_match() {
        assert_eq!(run_scorer(&ScorerRule::ExactMatch, "42", "42").unwrap(), 1.0);
        assert_eq!(run_scorer(&ScorerRule::ExactMatch, "42", "41").unwrap(), 0.0);
        assert_eq!(run_scorer(&ScorerRule::ExactMatch, "42", " 42").unwrap(), 0.0);
    }

    #[test]
    fn numeric_tolerance() {
        let rule = ScorerRule::NumericTolerance { tolerance: 0.01 };
        assert_eq!(run_scorer(&rule, "3.1416", "3.1415").unwrap(), 1.0);
        assert_eq!(run_scorer(&rule, "3.1416", "3.2").unwrap(), 0.0);
        assert_eq!(run_scorer(&rule, "3.1416", "pi").unwrap(), 0.0);
        assert_eq!(run_scorer(&rule, "1", "NaN").unwrap(), 0.0);
        let exact = ScorerRule::NumericTolerance { tolerance: 0.0 };
        assert_eq!(run_scorer(&exact, "3", " 3.0 ").unwrap(), 1.0);
    }

    #[test]
    fn malformed_rules() {
        let neg = ScorerRule::NumericTolerance { tolerance: -0.1 };
        assert!(matches!(run_scorer(&neg, "1", "1"), Err(ScorerError::MalformedRule(_))));
        let bad = ScorerRule::RegexMatch { pattern: "(".into() };
        assert!(bad.check().is_err());
        assert!(ScorerRule::ChoiceKey { key: " ".into() }.check().is_err());
    }

    #[test]
    fn normalized_regex_and_choice() {
        assert_eq!(
            run_scorer(&ScorerRule::NormalizedMatch, "Paris  France", " paris france\n").unwrap(),
            1.0
        );
        let re = ScorerRule::RegexMatch { pattern: r"\d+ apples?".into() };
        assert_eq!(run_scorer(&re, "", "12 apples").unwrap(), 1.0);
        assert_eq!(run_scorer(&re, "", "12 apples and pears").unwrap(), 0.0);
        let key = ScorerRule::ChoiceKey { key: "B".into() };
        for r in ["B", "(b)", "Answer: B.", "b) because"] {
            assert_eq!(run_scorer(&key, "", r).unwrap(), 1.0, "{r}");
        }
        assert_eq!(run_scorer(&key, "", "C").unwrap(), 0.0);
        assert_eq!(run_scorer(&key, "", "").unwrap(), 0.0);
    }

    fn rule_strategy() -> impl Strategy<Value = ScorerRule> {
        prop_oneof![
            Just(ScorerRule::ExactMatch),
            Just(ScorerRule::NormalizedMatch),
            (0.0f64..10.0).prop_map(|tolerance| ScorerRule::NumericTolerance { tolerance }),
            "[a-z0-9+*?.]{0,8}".prop_map(|pattern| ScorerRule::RegexMatch { pattern }),
            "[A-Ea-e]".prop_map(|key| ScorerRule::ChoiceKey { key }),
        ]
    }

    proptest! {
        #[test]
        fn scorer_is_total_and_bounded(rule in rule_strategy(), reference in ".{0,16}", response in ".{0,64}") {
            if rule.check().is_ok() {
                let s = run_scorer(&rule, &reference, &response).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, run_scorer(&rule, &reference, &response).unwrap());
            } else {
                prop_assert!(run_scorer(&rule, &reference, &response).is_err());
            }
        }
    }
}
