//! Simulated items, models and the in-process endpoint connector.
//!
//! A simulated prompt is `tag|suite|item`; its reference answer is
//! `ans|suite|item`. The tag says how the item was authored, which is all a
//! simulated model needs to decide whether it answers correctly.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::domain::{EndpointDescriptor, ScorerRule, SuitePayload, TestItem};
use crate::integrity::hash_parts;
use crate::orchestrator::{Connector, EndpointError, ModelEndpoint};

/// How an item was authored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemTag {
    Normal,
    /// Garbage; any model is right by coin flip.
    Spam,
    /// Written so that the named model gets it right.
    Tailored(String),
    /// Handed to the named model before evaluation.
    Colluded(String),
}

impl ItemTag {
    fn encode(&self) -> String {
        match self {
            ItemTag::Normal => "n".into(),
            ItemTag::Spam => "s".into(),
            ItemTag::Tailored(m) => format!("t:{m}"),
            ItemTag::Colluded(m) => format!("c:{m}"),
        }
    }

    fn decode(tag: &str) -> Option<Self> {
        Some(match tag {
            "n" => ItemTag::Normal,
            "s" => ItemTag::Spam,
            _ => match tag.split_once(':')? {
                ("t", m) => ItemTag::Tailored(m.to_string()),
                ("c", m) => ItemTag::Colluded(m.to_string()),
                _ => return None,
            },
        })
    }
}

pub fn prompt(tag: &ItemTag, suite: u64, item: usize) -> String {
    format!("{}|{suite}|{item}", tag.encode())
}

fn answer_for(prompt: &str) -> Option<(ItemTag, String)> {
    let mut parts = prompt.splitn(3, '|');
    let tag = ItemTag::decode(parts.next()?)?;
    let suite = parts.next()?;
    let item = parts.next()?;
    Some((tag, format!("ans|{suite}|{item}")))
}

/// A suite of `n` items sharing one tag.
pub fn payload(tag: &ItemTag, suite: u64, n: usize) -> SuitePayload {
    SuitePayload {
        items: (0..n)
            .map(|i| TestItem {
                prompt: prompt(tag, suite, i),
                reference_answer: format!("ans|{suite}|{i}"),
                scorer: ScorerRule::ExactMatch,
            })
            .collect(),
    }
}

/// Deterministic uniform draw in `[0, 1)` keyed by run, model and prompt,
/// so a model's answer to a prompt is the same in every run with that key.
pub fn unit_draw(run_key: &[u8; 32], label: &str, prompt: &str) -> f64 {
    let d = hash_parts(&[run_key, label.as_bytes(), b"|", prompt.as_bytes()]);
    let x = u64::from_le_bytes(d.0[..8].try_into().expect("8 bytes"));
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A simulated model: answers correctly with probability `theta`, always
/// on leaked prompts and on items written for it, and by coin flip on spam.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub run_key: [u8; 32],
    pub name: String,
    pub theta: f64,
    pub leaks: Arc<BTreeSet<String>>,
}

impl SimModel {
    pub fn correct_probability(&self, prompt: &str, tag: &ItemTag) -> f64 {
        if self.leaks.contains(prompt) {
            return 1.0;
        }
        match tag {
            ItemTag::Normal => self.theta,
            ItemTag::Spam => 0.5,
            ItemTag::Tailored(m) | ItemTag::Colluded(m) if *m == self.name => 1.0,
            ItemTag::Tailored(_) => self.theta / 2.0,
            ItemTag::Colluded(_) => self.theta,
        }
    }
}

impl ModelEndpoint for SimModel {
    fn query(&self, prompt: &str, _timeout: Duration) -> Result<String, EndpointError> {
        let Some((tag, answer)) = answer_for(prompt) else {
            return Ok("?".into());
        };
        let p = self.correct_probability(prompt, &tag);
        if unit_draw(&self.run_key, &self.name, prompt) < p {
            Ok(answer)
        } else {
            Ok("wrong".into())
        }
    }
}

/// Endpoint backed by a closure; handy for tests.
pub struct FnEndpoint<F>(pub F);

impl<F> ModelEndpoint for FnEndpoint<F>
where
    F: Fn(&str) -> Result<String, EndpointError> + Send + Sync,
{
    fn query(&self, prompt: &str, _timeout: Duration) -> Result<String, EndpointError> {
        (self.0)(prompt)
    }
}

/// Resolves endpoint URLs to in-process endpoints registered beforehand.
#[derive(Default)]
pub struct SimConnector {
    endpoints: Mutex<BTreeMap<String, Arc<dyn ModelEndpoint>>>,
}

impl SimConnector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, url: &str, endpoint: Arc<dyn ModelEndpoint>) {
        self.endpoints
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(url.to_string(), endpoint);
    }
}

impl Connector for SimConnector {
    fn connect(&self, endpoint: &EndpointDescriptor) -> Result<Arc<dyn ModelEndpoint>, String> {
        self.endpoints
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&endpoint.url)
            .cloned()
            .ok_or_else(|| format!("no simulated endpoint at {}", endpoint.url))
    }
}

pub fn sim_descriptor(url: &str) -> EndpointDescriptor {
    EndpointDescriptor {
        url: url.to_string(),
        auth_token: String::new(),
        max_qps: 1000.0,
        timeout_ms: 1000,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(theta: f64) -> SimModel {
        SimModel {
            run_key: [7; 32],
            name: "m".into(),
            theta,
            leaks: Arc::new(BTreeSet::new()),
        }
    }

    #[test]
    fn prompts_round_trip() {
        for tag in [
            ItemTag::Normal,
            ItemTag::Spam,
            ItemTag::Tailored("a".into()),
            ItemTag::Colluded("b".into()),
        ] {
            let p = prompt(&tag, 4, 2);
            assert_eq!(answer_for(&p), Some((tag, "ans|4|2".to_string())));
        }
    }

    #[test]
    fn ability_extremes() {
        let p = payload(&ItemTag::Normal, 1, 50);
        let right = |m: &SimModel| {
            p.items
                .iter()
                .filter(|it| m.query(&it.prompt, Duration::ZERO).unwrap() == it.reference_answer)
                .count()
        };
        assert_eq!(right(&model(1.0)), 50);
        assert_eq!(right(&model(0.0)), 0);
        let half = right(&model(0.5));
        assert!((10..=40).contains(&half), "{half}");
    }

    #[test]
    fn leaked_prompts_are_always_right() {
        let p = payload(&ItemTag::Normal, 9, 20);
        let mut m = model(0.0);
        m.leaks = Arc::new(p.items.iter().map(|i| i.prompt.clone()).collect());
        for it in &p.items {
            assert_eq!(m.query(&it.prompt, Duration::ZERO).unwrap(), it.reference_answer);
        }
    }
}
