//! JSON-over-HTTP transport for the remote oracle, embedder and reranker.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use crate::error::{MemoryError, Result};

/// Posts a JSON body to `path` (relative to a base URL) and returns the JSON
/// reply. Implementations handle retries themselves.
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Outcome of one attempt that did not succeed.
#[derive(Debug)]
pub enum AttemptError {
    /// Connection failures, timeouts, 429 and 5xx.
    Retryable(String),
    Fatal(String),
}

impl RetryPolicy {
    /// Runs `op` up to `attempts` times, sleeping `initial_backoff · 2^i`
    /// between attempts. Only retryable failures are retried; exhausting the
    /// attempts or a fatal failure yields `OracleUnavailable`.
    pub fn run<T>(&self, mut sleep: impl FnMut(Duration), mut op: impl FnMut() -> std::result::Result<T, AttemptError>) -> Result<T> {
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
            match op() {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(m)) => return Err(MemoryError::OracleUnavailable(m)),
                Err(AttemptError::Retryable(m)) => {
                    log::warn!("attempt {} of {} failed: {m}", attempt + 1, self.attempts);
                    last = m;
                }
            }
        }
        Err(MemoryError::OracleUnavailable(format!(
            "gave up after {} attempts: {last}",
            self.attempts
        )))
    }
}

/// OpenAI-compatible HTTP endpoint.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry,
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> std::result::Result<Value, AttemptError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| AttemptError::Retryable(format!("transport error: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AttemptError::Retryable(format!("HTTP {status} from {url}")));
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Fatal(format!("HTTP {status} from {url}: {text}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| AttemptError::Fatal(format!("response from {url} is not JSON: {e}")))
    }
}

impl JsonTransport for HttpTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        self.retry.run(thread::sleep, || self.attempt(&url, body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_with_exponential_backoff() {
        let calls = Cell::new(0);
        let mut sleeps = Vec::new();
        let out = RetryPolicy::default().run(
            |d| sleeps.push(d),
            || {
                calls.set(calls.get() + 1);
                if calls.get() < 3 {
                    Err(AttemptError::Retryable("busy".into()))
                } else {
                    Ok(7)
                }
            },
        );
        assert_eq!(out.unwrap(), 7);
        assert_eq!(sleeps, vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let calls = Cell::new(0);
        let out: Result<()> = RetryPolicy::default().run(
            |_| {},
            || {
                calls.set(calls.get() + 1);
                Err(AttemptError::Retryable("429".into()))
            },
        );
        assert!(matches!(out, Err(MemoryError::OracleUnavailable(_))));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let calls = Cell::new(0);
        let out: Result<()> = RetryPolicy::default().run(
            |_| {},
            || {
                calls.set(calls.get() + 1);
                Err(AttemptError::Fatal("401".into()))
            },
        );
        assert!(out.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_oracle_unavailable() {
        let t = HttpTransport::new(
            "http://127.0.0.1:9",
            None,
            Duration::from_millis(200),
            RetryPolicy {
                attempts: 2,
                initial_backoff: Duration::from_millis(1),
            },
        );
        assert!(matches!(
            t.post_json("chat/completions", &serde_json::json!({})),
            Err(MemoryError::OracleUnavailable(_))
        ));
    }
}
