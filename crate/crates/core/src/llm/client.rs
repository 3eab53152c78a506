use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    cache_key, ChatExchange, ChatRequest, LlmError, Mode, ReplayStore, Transport, TransportFailure,
    TransportKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total transport attempts per call, at least 1.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, failed_attempts: u32) -> Duration {
        let exp = failed_attempts.saturating_sub(1).min(16);
        self.initial_backoff.saturating_mul(1 << exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub min_interval: Duration,
    pub max_in_flight: usize,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            min_interval: Duration::ZERO,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Default)]
struct LimiterState {
    in_flight: usize,
    next_start: Option<Instant>,
}

#[derive(Debug)]
struct Limiter {
    config: RateLimit,
    state: Mutex<LimiterState>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let max = self.config.max_in_flight.max(1);
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        while state.in_flight >= max {
            state = self.freed.wait(state).unwrap_or_else(|p| p.into_inner());
        }
        state.in_flight += 1;
        let now = Instant::now();
        let start = state.next_start.map_or(now, |t| t.max(now));
        state.next_start = Some(start + self.config.min_interval);
        drop(state);
        let wait = start.saturating_duration_since(now);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.0.state.lock().unwrap_or_else(|p| p.into_inner());
        state.in_flight -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable across threads; every method takes `&self`.
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    store: ReplayStore,
    mode: Mode,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, store: ReplayStore, mode: Mode) -> Self {
        Self {
            transport,
            store,
            mode,
            retry: RetryPolicy::default(),
            limiter: Limiter {
                config: RateLimit::default(),
                state: Mutex::default(),
                freed: Condvar::new(),
            },
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, config: RateLimit) -> Self {
        self.limiter.config = config;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }

    fn replayed(&self, request: &ChatRequest, key: String, text: String, t0: Instant) -> ChatExchange {
        ChatExchange {
            request: request.clone(),
            response_text: text,
            cache_key: key,
            transport: TransportKind::Replay,
            latency: t0.elapsed(),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError> {
        request.validate()?;
        let key = cache_key(request);
        let t0 = Instant::now();
        match self.mode {
            Mode::ReplayOnly => {
                let text = self.store.get(&key)?.ok_or(LlmError::CacheMiss(key.clone()))?;
                Ok(self.replayed(request, key, text, t0))
            }
            Mode::LiveRecord => {
                if let Some(text) = self.store.get(&key)? {
                    return Ok(self.replayed(request, key, text, t0));
                }
                let text = self.send_with_retry(request)?;
                self.store.put(&key, &request.canonical_json(), &text)?;
                Ok(self.live(request, key, text, t0))
            }
            Mode::LivePassthrough => {
                let text = self.send_with_retry(request)?;
                Ok(self.live(request, key, text, t0))
            }
        }
    }

    fn live(&self, request: &ChatRequest, key: String, text: String, t0: Instant) -> ChatExchange {
        ChatExchange {
            request: request.clone(),
            response_text: text,
            cache_key: key,
            transport: TransportKind::Live,
            latency: t0.elapsed(),
        }
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.send(request)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(TransportFailure::Auth(m)) => return Err(LlmError::AuthError(m)),
                Err(TransportFailure::Fatal(message)) => {
                    return Err(LlmError::TransportError {
                        attempts: attempt,
                        message,
                    })
                }
                Err(TransportFailure::Retryable(message)) => {
                    if attempt >= max {
                        return Err(LlmError::TransportError {
                            attempts: attempt,
                            message,
                        });
                    }
                    tracing::debug!(attempt, %message, "retrying chat request");
                    std::thread::sleep(self.retry.backoff(attempt));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::OfflineTransport;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    struct Scripted {
        calls: AtomicU32,
        failures_before_success: u32,
        failure: TransportFailure,
    }

    impl Transport for Scripted {
        fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.failures_before_success {
                Err(self.failure.clone())
            } else {
                Ok(format!("echo:{}", request.messages[0].content))
            }
        }
    }

    fn scripted(failures: u32, failure: TransportFailure) -> Arc<Scripted> {
        Arc::new(Scripted {
            calls: AtomicU32::new(0),
            failures_before_success: failures,
            failure,
        })
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn replay_only_never_touches_transport() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::single("m", "hello");
        let store = ReplayStore::new(dir.path());
        store
            .put(&cache_key(&req), &req.canonical_json(), "stored")
            .unwrap();
        let client = LlmClient::new(Arc::new(OfflineTransport), store, Mode::ReplayOnly);
        let a = client.complete(&req).unwrap();
        let b = client.complete(&req).unwrap();
        assert_eq!(a.response_text, "stored");
        assert_eq!(a.response_text, b.response_text);
        assert_eq!(a.transport, TransportKind::Replay);
    }

    #[test]
    fn replay_miss() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new(
            Arc::new(OfflineTransport),
            ReplayStore::new(dir.path()),
            Mode::ReplayOnly,
        );
        assert!(matches!(
            client.complete(&ChatRequest::single("m", "x")),
            Err(LlmError::CacheMiss(_))
        ));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let t = scripted(0, TransportFailure::Fatal(String::new()));
        let req = ChatRequest::single("m", "prompt");
        let live = LlmClient::new(t.clone(), ReplayStore::new(dir.path()), Mode::LiveRecord)
            .complete(&req)
            .unwrap();
        assert_eq!(live.transport, TransportKind::Live);
        let replay = LlmClient::new(
            Arc::new(OfflineTransport),
            ReplayStore::new(dir.path()),
            Mode::ReplayOnly,
        )
        .complete(&req)
        .unwrap();
        assert_eq!(live.response_text, replay.response_text);
        assert_eq!(live.cache_key, replay.cache_key);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn passthrough_does_not_record() {
        let dir = tempfile::tempdir().unwrap();
        let t = scripted(0, TransportFailure::Fatal(String::new()));
        let client = LlmClient::new(t, ReplayStore::new(dir.path()), Mode::LivePassthrough);
        let ex = client.complete(&ChatRequest::single("m", "p")).unwrap();
        assert!(!client.store().contains(&ex.cache_key));
    }

    #[test]
    fn retries_are_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let t = scripted(10, TransportFailure::Retryable("503".into()));
        let client = LlmClient::new(t.clone(), ReplayStore::new(dir.path()), Mode::LivePassthrough)
            .with_retry(fast_retry());
        match client.complete(&ChatRequest::single("m", "p")) {
            Err(LlmError::TransportError { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);

        let t = scripted(2, TransportFailure::Retryable("429".into()));
        let client = LlmClient::new(t.clone(), ReplayStore::new(dir.path()), Mode::LivePassthrough)
            .with_retry(fast_retry());
        assert!(client.complete(&ChatRequest::single("m", "p")).is_ok());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_is_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let t = scripted(10, TransportFailure::Auth("401".into()));
        let client = LlmClient::new(t.clone(), ReplayStore::new(dir.path()), Mode::LivePassthrough)
            .with_retry(fast_retry());
        assert!(matches!(
            client.complete(&ChatRequest::single("m", "p")),
            Err(LlmError::AuthError(_))
        ));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(100),
        };
        assert_eq!(r.backoff(1), Duration::from_millis(100));
        assert_eq!(r.backoff(2), Duration::from_millis(200));
        assert_eq!(r.backoff(3), Duration::from_millis(400));
    }

    struct Gauge {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for Gauge {
        fn send(&self, _request: &ChatRequest) -> Result<String, TransportFailure> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(String::new())
        }
    }

    #[test]
    fn in_flight_cap_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let gauge = Arc::new(Gauge {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let client = Arc::new(
            LlmClient::new(gauge.clone(), ReplayStore::new(dir.path()), Mode::LivePassthrough)
                .with_rate_limit(RateLimit {
                    min_interval: Duration::from_millis(2),
                    max_in_flight: 2,
                }),
        );
        let t0 = Instant::now();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let c = Arc::clone(&client);
                std::thread::spawn(move || c.complete(&ChatRequest::single("m", format!("{i}"))).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(gauge.peak.load(Ordering::SeqCst) <= 2);
        // Eight starts spaced 2 ms apart take at least 14 ms.
        assert!(t0.elapsed() >= Duration::from_millis(14));
    }
}
