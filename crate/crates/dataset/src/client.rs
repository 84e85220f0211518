//! Annotation service clients.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DatasetError, Result};
use crate::label::{parse_label, FinalLabel, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    /// Requests in flight at once.
    pub max_concurrent: usize,
    /// Minimum spacing between request starts.
    pub min_interval: Duration,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { max_concurrent: 4, min_interval: Duration::ZERO }
    }
}

pub trait AnnotationClient: Sync {
    fn send(&self, prompt: &str) -> Result<String>;
    fn rate_limit(&self) -> RateLimit;
    fn timeout(&self) -> Duration;
}

/// Spaces request starts `min_interval` apart across threads.
pub struct Pacer {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl Pacer {
    pub fn new(interval: Duration) -> Self {
        Self { interval, next: Mutex::new(None) }
    }

    pub fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Offline client. The response is a pure function of the prompt: it reads
/// the last `Media:` and `Original label:` lines, writes a reasoning
/// paragraph, and restates the label. A hash-selected share of prompts gets
/// a corrupted response so that filtering has something to reject.
#[derive(Debug, Clone)]
pub struct StubClient {
    pub kind: TaskKind,
    /// Corrupted responses per thousand prompts.
    pub corrupt_permille: u16,
    pub limit: RateLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// The answer line is missing.
    NoAnswer,
    /// One coordinate or interval bound is off by one.
    Shifted,
}

impl StubClient {
    pub fn new(kind: TaskKind, corrupt_permille: u16) -> Self {
        Self { kind, corrupt_permille, limit: RateLimit::default() }
    }

    fn digest(prompt: &str) -> [u8; 32] {
        Sha256::digest(prompt.as_bytes()).into()
    }

    /// Which corruption, if any, `prompt` receives.
    pub fn corruption(&self, prompt: &str) -> Option<Corruption> {
        let h = Self::digest(prompt);
        let draw = u16::from_le_bytes([h[0], h[1]]) % 1000;
        (draw < self.corrupt_permille).then(|| if h[2] % 2 == 0 { Corruption::NoAnswer } else { Corruption::Shifted })
    }
}

fn last_field<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    prompt.lines().rev().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

fn shift(label: &mut FinalLabel) {
    match label {
        FinalLabel::Ave(e) => e.end += 1,
        FinalLabel::Avvp { events } => {
            if let Some(e) = events.first_mut() {
                e.end += 1;
            }
        }
        FinalLabel::Arig(b) => b.x_right += 1,
        FinalLabel::Avqa { answer } => answer.push_str(" or something else"),
    }
}

const OPENERS: [&str; 4] = [
    "The soundtrack is dominated by one clear source",
    "Listening first, a distinct sound stands out",
    "The audio carries a recognizable pattern",
    "A single source explains most of what is heard",
];
const LINKS: [&str; 4] = [
    "and the frames show the object producing it",
    "which matches the visible motion in the scene",
    "and the picture confirms where it comes from",
    "consistent with what the camera shows",
];

impl AnnotationClient for StubClient {
    fn send(&self, prompt: &str) -> Result<String> {
        let raw = last_field(prompt, "Original label:").ok_or_else(|| DatasetError::Client("prompt has no `Original label:` line".into()))?;
        let media = last_field(prompt, "Media:").unwrap_or("the clip");
        let h = Self::digest(prompt);
        let reasoning = format!(
            "{} in {media}, {}. The plain label therefore holds.",
            OPENERS[h[3] as usize % OPENERS.len()],
            LINKS[h[4] as usize % LINKS.len()]
        );
        let answer = match (self.corruption(prompt), parse_label(raw, self.kind)) {
            (Some(Corruption::NoAnswer), _) => return Ok(format!("Reasoning: {reasoning}\n")),
            (Some(Corruption::Shifted), Ok(mut label)) => {
                shift(&mut label);
                label.to_string()
            }
            (_, Ok(label)) => label.to_string(),
            // Echo labels the stub cannot read; downstream parsing decides.
            (_, Err(_)) => raw.to_string(),
        };
        Ok(format!("Reasoning: {reasoning}\nAnswer: {answer}"))
    }

    fn rate_limit(&self) -> RateLimit {
        self.limit
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(1)
    }
}

/// Environment variable holding the annotation endpoint URL.
pub const URL_ENV: &str = "AVCOOP_ANNOTATOR_URL";
/// Environment variable holding the bearer token for the endpoint.
pub const KEY_ENV: &str = "AVCOOP_ANNOTATOR_KEY";

/// Blocking client for a service that accepts `{"prompt": ...}` and replies
/// with `{"response": ...}`.
#[cfg(feature = "http")]
pub struct HttpClient {
    url: String,
    key: Option<String>,
    limit: RateLimit,
    timeout: Duration,
    inner: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl HttpClient {
    pub fn from_env(limit: RateLimit, timeout: Duration) -> Result<Self> {
        let url = std::env::var(URL_ENV).map_err(|_| DatasetError::Client(format!("{URL_ENV} is not set")))?;
        let key = std::env::var(KEY_ENV).ok();
        let inner = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| DatasetError::Client(e.to_string()))?;
        Ok(Self { url, key, limit, timeout, inner })
    }
}

#[cfg(feature = "http")]
impl AnnotationClient for HttpClient {
    fn send(&self, prompt: &str) -> Result<String> {
        #[derive(Deserialize)]
        struct Reply {
            response: String,
        }
        let mut req = self.inner.post(&self.url).json(&serde_json::json!({ "prompt": prompt }));
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let reply = req.send().and_then(|r| r.error_for_status()).map_err(|e| DatasetError::Client(e.to_string()))?;
        reply.json::<Reply>().map(|r| r.response).map_err(|e| DatasetError::Client(e.to_string()))
    }

    fn rate_limit(&self) -> RateLimit {
        self.limit
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }
}
