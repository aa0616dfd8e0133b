//! Request plumbing shared by every harvest: a transport trait, a recorded
//! fixture transport, a content-addressed cache, and a polite wrapper that
//! rate-limits and retries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::{sha256_hex, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub endpoint: String,
    #[serde(default)]
    pub query: BTreeMap<String, String>,
}

impl Request {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Request {
            endpoint: endpoint.into(),
            query: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.query.insert(key.into(), value.into());
        self
    }

    /// Endpoint plus the query with keys in sorted order.
    pub fn canonical(&self) -> String {
        let mut s = self.endpoint.clone();
        for (i, (k, v)) in self.query.iter().enumerate() {
            s.push(if i == 0 { '?' } else { '&' });
            s.push_str(k);
            s.push('=');
            s.push_str(v);
        }
        s
    }

    pub fn cache_key(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Performs one GET. `Err` is a connection-level failure; HTTP error statuses
/// come back as `Ok` responses.
pub trait Transport: Send + Sync {
    fn get(&self, req: &Request) -> std::result::Result<Response, String>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        (**self).get(req)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureEntry {
    endpoint: String,
    #[serde(default)]
    query: BTreeMap<String, String>,
    #[serde(default = "ok_status")]
    status: u16,
    #[serde(default)]
    body: serde_json::Value,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FixtureFile {
    requests: Vec<FixtureEntry>,
}

/// Replays recorded responses. Unknown requests fail as a connection error.
#[derive(Debug, Default)]
pub struct FixtureTransport {
    responses: BTreeMap<String, Response>,
    requests: AtomicU64,
}

impl FixtureTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, req: &Request, status: u16, body: &serde_json::Value) {
        let body = if body.is_null() {
            Vec::new()
        } else {
            serde_json::to_vec(body).expect("json value serializes")
        };
        self.responses.insert(req.canonical(), Response { status, body });
    }

    /// Fixture document: `{"requests": [{"endpoint", "query", "status", "body"}]}`.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: FixtureFile = serde_json::from_slice(bytes)?;
        let mut t = Self::new();
        for e in file.requests {
            let req = Request {
                endpoint: e.endpoint,
                query: e.query,
            };
            t.insert(&req, e.status, &e.body);
        }
        Ok(t)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    /// Number of `get` calls served so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Transport for FixtureTransport {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.responses
            .get(&req.canonical())
            .cloned()
            .ok_or_else(|| format!("no recorded response for {}", req.canonical()))
    }
}

/// Content-addressed response store. Successful bodies and 404s are kept;
/// other statuses always go to the inner transport.
pub struct CachedTransport<T> {
    inner: T,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<T: Transport> CachedTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        CachedTransport {
            inner,
            dir: dir.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.{ext}"))
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for CachedTransport<T> {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        let key = req.cache_key();
        let body_path = self.path(&key, "body");
        if let Ok(body) = std::fs::read(&body_path) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Response { status: 200, body });
        }
        let missing_path = self.path(&key, "404");
        if missing_path.exists() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Response {
                status: 404,
                body: Vec::new(),
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let resp = self.inner.get(req)?;
        let stored = match resp.status {
            200 => write_atomic(&body_path, &resp.body),
            404 => write_atomic(&missing_path, b""),
            _ => Ok(()),
        };
        stored.map_err(|e| format!("cache write failed: {e}"))?;
        Ok(resp)
    }
}

/// Time source for rate limiting and backoff.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only moves when slept on.
#[derive(Debug, Default)]
pub struct MockClock {
    now: Mutex<Duration>,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

pub const DEFAULT_REQUESTS_PER_MINUTE: u32 = 50;

/// Token bucket in its virtual-scheduling form: each grant pushes the
/// theoretical arrival time forward by one interval, and up to `burst` grants
/// may run ahead of it.
pub struct RateLimiter {
    interval: Duration,
    burst: u32,
    clock: Arc<dyn Clock>,
    tat: Mutex<Duration>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, burst: u32, clock: Arc<dyn Clock>) -> Result<Self> {
        if requests_per_minute == 0 || burst == 0 {
            return Err(Error::Config("rate limit and burst must be positive".into()));
        }
        Ok(RateLimiter {
            interval: Duration::from_secs(60) / requests_per_minute,
            burst,
            clock,
            tat: Mutex::new(Duration::ZERO),
        })
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks (via the clock) until a request may be sent and returns the
    /// instant it was granted.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut tat = self.tat.lock().unwrap();
                let now = self.clock.now();
                let slack = self.interval * (self.burst - 1);
                let earliest = tat.saturating_sub(slack);
                if now >= earliest {
                    *tat = (*tat).max(now) + self.interval;
                    return now;
                }
                earliest - now
            };
            self.clock.sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 1_000,
            max_delay_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(32))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Rate-limits every attempt and retries connection failures, 429 and 5xx
/// with exponential backoff.
pub struct PoliteTransport<T> {
    inner: T,
    limiter: Arc<RateLimiter>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl<T: Transport> PoliteTransport<T> {
    pub fn new(inner: T, limiter: Arc<RateLimiter>, retry: RetryPolicy, clock: Arc<dyn Clock>) -> Self {
        PoliteTransport {
            inner,
            limiter,
            retry,
            clock,
        }
    }
}

impl<T: Transport> Transport for PoliteTransport<T> {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts.max(1) {
            if attempt > 0 {
                self.clock.sleep(self.retry.delay(attempt - 1));
            }
            self.limiter.acquire();
            match self.inner.get(req) {
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    last = format!("HTTP {} from {}", r.status, req.endpoint)
                }
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
        }
        Err(format!(
            "{last} (gave up after {} attempts)",
            self.retry.max_attempts.max(1)
        ))
    }
}
