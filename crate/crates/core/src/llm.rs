//! Chat-completion boundary.
//!
//! [`HttpChatClient`] speaks the common hosted chat-completion JSON shape
//! (`model`, `messages`, `temperature`) against a configurable endpoint.
//! [`MockChatClient`] answers from a script keyed by prompt digest and never
//! touches the network.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "CBI_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("protocol error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Protocol { status: Option<u16>, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript: {0}")]
    Transcript(#[from] std::io::Error),
}

impl LlmError {
    fn protocol(message: impl Into<String>) -> Self {
        LlmError::Protocol {
            status: None,
            message: message.into(),
        }
    }

    /// Timeouts, rate limiting and server-side (5xx) failures are transient.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Timeout { .. } | LlmError::RateLimited { .. } => true,
            LlmError::Protocol { status: Some(s), .. } => *s >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_output_chars: Option<usize>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_output_chars: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty user message".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    fn clip(&self, mut text: String) -> String {
        if let Some(cap) = self.max_output_chars {
            if let Some((idx, _)) = text.char_indices().nth(cap) {
                text.truncate(idx);
            }
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint_url: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(with = "duration_secs")]
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    /// Estimated price of one successful call, per model id.
    pub price_per_call: BTreeMap<String, f64>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
            price_per_call: BTreeMap::new(),
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    /// Attempts that reached the wire, successful or not.
    pub request_count: u64,
    pub total_cost_estimate: f64,
}

/// Anything that can answer a chat request.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;

    fn usage(&self) -> UsageRecord;
}

/// Counting semaphore that bounds concurrent calls and remembers the peak.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        InFlightLimiter {
            limit: limit.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut state = self.state.lock().unwrap();
        while state.0 >= self.limit {
            state = self.freed.wait(state).unwrap();
        }
        state.0 += 1;
        state.1 = state.1.max(state.0);
        InFlightGuard { limiter: self }
    }

    /// Highest number of simultaneous holders observed.
    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().1
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().unwrap();
        state.0 -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Default)]
struct UsageMeter(Mutex<UsageRecord>);

impl UsageMeter {
    fn record_attempt(&self) {
        self.0.lock().unwrap().request_count += 1;
    }

    fn add_cost(&self, cost: f64) {
        self.0.lock().unwrap().total_cost_estimate += cost;
    }

    fn snapshot(&self) -> UsageRecord {
        *self.0.lock().unwrap()
    }
}

/// Hex SHA-256 of a prompt; the key of mock scripts.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub struct HttpChatClient {
    config: ClientConfig,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
    usage: UsageMeter,
}

impl HttpChatClient {
    pub fn new(config: ClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            limiter: InFlightLimiter::new(config.max_in_flight),
            config,
            agent,
            usage: UsageMeter::default(),
        }
    }

    /// Fails with [`LlmError::Auth`] when the key variable is unset or blank.
    pub fn api_key(&self) -> Result<String, LlmError> {
        match std::env::var(&self.config.api_key_env) {
            Ok(key) if !key.trim().is_empty() => Ok(key),
            _ => Err(LlmError::Auth(format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ))),
        }
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    fn attempt(&self, key: &str, request: &ChatRequest) -> Result<String, LlmError> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({ "role": "system", "content": system }));
        }
        messages.push(json!({ "role": "user", "content": request.user }));
        let body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });

        let _slot = self.limiter.acquire();
        self.usage.record_attempt();
        let response = self
            .agent
            .post(&self.config.endpoint_url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout { attempts: 1 }),
            Err(e) => return Err(LlmError::protocol(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(text) => text,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout { attempts: 1 }),
            Err(e) => return Err(LlmError::protocol(e.to_string())),
        };
        match status {
            200..=299 => parse_completion(&text),
            401 | 403 => Err(LlmError::Auth(format!("provider rejected the key (HTTP {status})"))),
            408 => Err(LlmError::Timeout { attempts: 1 }),
            429 => Err(LlmError::RateLimited { attempts: 1 }),
            _ => Err(LlmError::Protocol {
                status: Some(status),
                message: text.chars().take(200).collect(),
            }),
        }
    }
}

fn parse_completion(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| LlmError::protocol(format!("response is not JSON: {e}")))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::protocol("response lacks choices[0].message.content"))
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let key = self.api_key()?;
        request.validate()?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&key, request) {
                Ok(text) => {
                    let price = self
                        .config
                        .price_per_call
                        .get(&request.model_id)
                        .copied()
                        .unwrap_or(0.0);
                    self.usage.add_cost(price);
                    return Ok(request.clip(text));
                }
                Err(err) if err.is_retryable() && attempts <= self.config.max_retries => {
                    let delay = self.config.backoff_base * 2u32.saturating_pow(attempts - 1);
                    log::warn!("attempt {attempts} failed ({err}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(LlmError::Timeout { .. }) => return Err(LlmError::Timeout { attempts }),
                Err(LlmError::RateLimited { .. }) => return Err(LlmError::RateLimited { attempts }),
                Err(err) => return Err(err),
            }
        }
    }

    fn usage(&self) -> UsageRecord {
        self.usage.snapshot()
    }
}

/// Scripted client: maps [`prompt_digest`] of the user message to a response.
pub struct MockChatClient {
    script: HashMap<String, String>,
    calls: AtomicU64,
    limiter: InFlightLimiter,
    latency: Option<Duration>,
}

impl MockChatClient {
    pub fn new(script: HashMap<String, String>) -> Self {
        MockChatClient {
            script,
            calls: AtomicU64::new(0),
            limiter: InFlightLimiter::new(ClientConfig::default().max_in_flight),
            latency: None,
        }
    }

    /// Script keyed by the prompts themselves rather than their digests.
    pub fn from_prompts<I, P, R>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: AsRef<str>,
        R: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(p, r)| (prompt_digest(p.as_ref()), r.into()))
                .collect(),
        )
    }

    /// Reads a `{ "<digest>": "<response>" }` script file.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)?;
        let script: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| LlmError::protocol(format!("mock script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.limiter = InFlightLimiter::new(limit);
        self
    }

    /// Holds every call for `latency`, to make overlap observable.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let _slot = self.limiter.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        self.script
            .get(&prompt_digest(&request.user))
            .map(|r| request.clip(r.clone()))
            .ok_or_else(|| LlmError::protocol("no scripted response"))
    }

    fn usage(&self) -> UsageRecord {
        UsageRecord {
            request_count: self.call_count(),
            total_cost_estimate: 0.0,
        }
    }
}

/// Wraps a client and appends every exchange to a JSON-lines file.
pub struct TranscriptClient<C> {
    inner: C,
    sink: Mutex<File>,
}

impl<C: ChatClient> TranscriptClient<C> {
    pub fn new(inner: C, path: &Path) -> Result<Self, LlmError> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TranscriptClient {
            inner,
            sink: Mutex::new(sink),
        })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: ChatClient> ChatClient for TranscriptClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let result = self.inner.complete(request);
        let entry = json!({
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "model": request.model_id,
            "digest": prompt_digest(&request.user),
            "request": request.user,
            "response": result.as_ref().ok(),
            "error": result.as_ref().err().map(ToString::to_string),
        });
        let mut sink = self.sink.lock().unwrap();
        writeln!(sink, "{entry}")?;
        result
    }

    fn usage(&self) -> UsageRecord {
        self.inner.usage()
    }
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn usage(&self) -> UsageRecord {
        (**self).usage()
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn usage(&self) -> UsageRecord {
        (**self).usage()
    }
}
