//! Blocking JSON-over-HTTP client with retries, shared by the remote
//! labeler and the remote embedder.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable prefix for endpoint overrides (`SUBTALK_LABELER_URL`, ...).
pub const ENV_PREFIX: &str = "SUBTALK_";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request to {url} failed after {attempts} attempts: {message}")]
    Unavailable { url: String, attempts: u32, message: String },
    #[error("server at {url} rejected the request with status {status}")]
    Rejected { url: String, status: u16 },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
    /// Upper bound on in-flight requests for batch calls.
    pub concurrency: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial_backoff_ms: 200, timeout_ms: 30_000, concurrency: 8 }
    }
}

/// Reads `SUBTALK_<name>` from the environment.
pub fn env_var(name: &str) -> Option<String> {
    std::env::var(format!("{ENV_PREFIX}{name}")).ok().filter(|v| !v.is_empty())
}

#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    pub policy: RetryPolicy,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("policy", &self.policy).finish()
    }
}

impl JsonClient {
    pub fn new(policy: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
            .build();
        Self { agent: config.into(), policy }
    }

    /// POSTs `body` and decodes the response, retrying transport failures,
    /// 429 and 5xx with exponential backoff. Other 4xx fail immediately.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, RemoteError> {
        let mut backoff = Duration::from_millis(self.policy.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.policy.retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.agent.post(url).send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| RemoteError::Protocol(format!("undecodable response from {url}: {e}")));
                }
                Err(ureq::Error::StatusCode(status)) if status != 429 && status < 500 => {
                    return Err(RemoteError::Rejected { url: url.to_string(), status });
                }
                Err(e) => {
                    log::warn!("attempt {} to {url} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(RemoteError::Unavailable { url: url.to_string(), attempts: self.policy.retries + 1, message: last })
    }
}

/// Maps `f` over `items` with at most `limit` calls in flight, keeping order.
pub fn bounded_map<T: Sync, R: Send, E: Send>(
    items: &[T],
    limit: usize,
    f: impl Fn(&T) -> Result<R, E> + Sync,
) -> Result<Vec<R>, E> {
    let next = AtomicUsize::new(0);
    let workers = limit.max(1).min(items.len().max(1));
    let mut slots: Vec<Option<Result<R, E>>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                let failed = r.is_err();
                results.lock().unwrap()[i] = Some(r);
                if failed {
                    // Stop handing out work; already-running calls finish.
                    next.store(items.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for slot in slots {
        match slot {
            Some(Ok(r)) => out.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_map_keeps_order_and_limit() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<u32> = (0..50).collect();
        let out = bounded_map(&items, 4, |&x| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            live.fetch_sub(1, Ordering::SeqCst);
            Ok::<_, ()>(x * 2)
        })
        .unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 4);
    }

    #[test]
    fn bounded_map_reports_error() {
        let items = [1, 2, 3];
        assert_eq!(bounded_map(&items, 2, |&x| if x == 2 { Err("boom") } else { Ok(x) }), Err("boom"));
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let client = JsonClient::new(RetryPolicy { retries: 3, initial_backoff_ms: 1, timeout_ms: 500, concurrency: 1 });
        let err = client.post::<_, serde_json::Value>(&format!("http://127.0.0.1:{port}/x"), &serde_json::json!({})).unwrap_err();
        assert!(matches!(err, RemoteError::Unavailable { attempts: 4, .. }), "{err}");
    }
}
