//! Querying model endpoints: the endpoint contract, pacing and retries.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::config::RetryPolicy;
use crate::domain::{run_scorer, EndpointDescriptor, EvalAnnotation, SuitePayload};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndpointError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
}

/// A model that answers prompts. Real HTTP models and simulated agents
/// implement the same contract, so the orchestrator code path is shared.
pub trait ModelEndpoint: Send + Sync {
    fn query(&self, prompt: &str, timeout: Duration) -> Result<String, EndpointError>;

    /// Cheap reachability check run at registration.
    fn probe(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Turns a registered endpoint descriptor into something queryable.
pub trait Connector: Send + Sync {
    fn connect(&self, endpoint: &EndpointDescriptor) -> Result<Arc<dyn ModelEndpoint>, String>;
}

/// Time source for pacing and backoff.
pub trait Sleeper: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct RealSleeper {
    start: Instant,
}

impl Default for RealSleeper {
    fn default() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Sleeper for RealSleeper {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Advances a virtual clock instead of sleeping; used by the simulator and
/// tests.
#[derive(Debug, Default)]
pub struct VirtualSleeper {
    elapsed: Mutex<Duration>,
}

impl Sleeper for VirtualSleeper {
    fn now(&self) -> Duration {
        *self.elapsed.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sleep(&self, d: Duration) {
        *self.elapsed.lock().unwrap_or_else(|e| e.into_inner()) += d;
    }
}

/// Spaces requests at least `1 / max_qps` apart.
#[derive(Debug, Clone)]
pub struct Pacer {
    interval: Duration,
    next: Option<Duration>,
}

impl Pacer {
    pub fn new(max_qps: f64) -> Self {
        let interval = if max_qps.is_finite() && max_qps > 0.0 {
            Duration::from_secs_f64(1.0 / max_qps)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: None,
        }
    }

    /// Blocks until the next request may start.
    pub fn wait(&mut self, sleeper: &dyn Sleeper) {
        let now = sleeper.now();
        let start = match self.next {
            Some(next) if next > now => {
                sleeper.sleep(next - now);
                next
            }
            _ => now,
        };
        self.next = Some(start + self.interval);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub item_scores: Vec<f64>,
    pub responses: Vec<String>,
    pub annotation: Option<EvalAnnotation>,
}

/// Runs every item of `payload` against one model. Items that still fail
/// after the retry budget score 0 with an empty response, and the record is
/// annotated with the failure count. The pacer is per model, so callers
/// evaluating several suites on one model reuse it.
pub fn evaluate_model(
    endpoint: &dyn ModelEndpoint,
    descriptor: &EndpointDescriptor,
    payload: &SuitePayload,
    retry: &RetryPolicy,
    pacer: &mut Pacer,
    sleeper: &dyn Sleeper,
) -> Evaluation {
    let timeout = Duration::from_millis(descriptor.timeout_ms);
    let mut item_scores = Vec::with_capacity(payload.items.len());
    let mut responses = Vec::with_capacity(payload.items.len());
    let (mut timeouts, mut unreachable) = (0u32, 0u32);
    for item in &payload.items {
        let mut outcome = Err(EndpointError::Timeout);
        for attempt in 0..retry.attempts {
            if attempt > 0 {
                sleeper.sleep(Duration::from_millis(retry.delay_ms(attempt - 1)));
            }
            pacer.wait(sleeper);
            outcome = endpoint.query(&item.prompt, timeout);
            if outcome.is_ok() {
                break;
            }
        }
        match outcome {
            Ok(resp) => {
                let s = run_scorer(&item.scorer, &item.reference_answer, &resp).unwrap_or(0.0);
                item_scores.push(s);
                responses.push(resp);
            }
            Err(e) => {
                match e {
                    EndpointError::Timeout => timeouts += 1,
                    EndpointError::Unreachable(_) => unreachable += 1,
                }
                item_scores.push(0.0);
                responses.push(String::new());
            }
        }
    }
    let failed = timeouts + unreachable;
    let annotation = if failed == 0 {
        None
    } else if timeouts > 0 {
        Some(EvalAnnotation::Timeout {
            failed_items: failed,
        })
    } else {
        Some(EvalAnnotation::Unreachable {
            failed_items: failed,
        })
    };
    Evaluation {
        item_scores,
        responses,
        annotation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ScorerRule, TestItem};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn payload(n: usize) -> SuitePayload {
        SuitePayload {
            items: (0..n)
                .map(|i| TestItem {
                    prompt: format!("q{i}"),
                    reference_answer: format!("a{i}"),
                    scorer: ScorerRule::ExactMatch,
                })
                .collect(),
        }
    }

    fn desc(qps: f64) -> EndpointDescriptor {
        EndpointDescriptor {
            url: "sim://x".into(),
            auth_token: String::new(),
            max_qps: qps,
            timeout_ms: 50,
        }
    }

    struct Oracle;
    impl ModelEndpoint for Oracle {
        fn query(&self, prompt: &str, _: Duration) -> Result<String, EndpointError> {
            Ok(prompt.replacen('q', "a", 1))
        }
    }

    struct Dead(AtomicU32);
    impl ModelEndpoint for Dead {
        fn query(&self, _: &str, _: Duration) -> Result<String, EndpointError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(EndpointError::Timeout)
        }
    }

    fn run(e: &dyn ModelEndpoint, qps: f64, n: usize, s: &VirtualSleeper) -> Evaluation {
        let d = desc(qps);
        let mut pacer = Pacer::new(d.max_qps);
        evaluate_model(e, &d, &payload(n), &RetryPolicy::default(), &mut pacer, s)
    }

    /// Fails the first call, then answers.
    struct Flaky(AtomicU32);
    impl ModelEndpoint for Flaky {
        fn query(&self, prompt: &str, _: Duration) -> Result<String, EndpointError> {
            if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(EndpointError::Unreachable("reset".into()))
            } else {
                Oracle.query(prompt, Duration::ZERO)
            }
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let s = VirtualSleeper::default();
        let e = run(&Oracle, 1000.0, 4, &s);
        assert_eq!(e.item_scores, vec![1.0; 4]);
        assert_eq!(e.annotation, None);
    }

    #[test]
    fn dead_model_scores_zero_with_timeout_annotation() {
        let s = VirtualSleeper::default();
        let dead = Dead(AtomicU32::new(0));
        let retry = RetryPolicy::default();
        let e = run(&dead, 1000.0, 4, &s);
        assert_eq!(e.item_scores, vec![0.0; 4]);
        assert_eq!(e.annotation, Some(EvalAnnotation::Timeout { failed_items: 4 }));
        assert_eq!(dead.0.load(Ordering::SeqCst), 4 * retry.attempts);
        // Two backoffs per item: 100 + 200 ms.
        assert!(s.now() >= Duration::from_millis(4 * 300));
    }

    #[test]
    fn retry_recovers() {
        let s = VirtualSleeper::default();
        let e = run(&Flaky(AtomicU32::new(0)), 1000.0, 2, &s);
        assert_eq!(e.item_scores, vec![1.0, 1.0]);
        assert_eq!(e.annotation, None);
    }

    #[test]
    fn pacing_honors_max_qps() {
        let s = VirtualSleeper::default();
        run(&Oracle, 2.0, 5, &s);
        // Five requests at 2 qps: the last starts 2 s after the first.
        assert_eq!(s.now(), Duration::from_secs(2));
    }
}
