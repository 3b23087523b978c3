//! Uniform access to chat models.
//!
//! A [`Gateway`] owns a registry of [`ChatBackend`]s keyed by model id. Remote
//! endpoints speak the common chat-completion JSON protocol; scripted models
//! answer from a fixture file keyed by a digest of the input messages. The
//! gateway adds three things on top of a backend: a process-wide bound on
//! in-flight calls, retries with exponential backoff for transient failures,
//! and a content-addressed on-disk cache for temperature-0 calls.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RemoteEndpoint,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
}

impl ModelSpec {
    pub fn scripted(model_id: impl Into<String>, script_path: impl Into<PathBuf>) -> Self {
        ModelSpec {
            model_id: model_id.into(),
            kind: ModelKind::Scripted,
            endpoint_url: None,
            auth_token_env_var: None,
            script_path: Some(script_path.into()),
        }
    }

    pub fn remote(model_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        ModelSpec {
            model_id: model_id.into(),
            kind: ModelKind::RemoteEndpoint,
            endpoint_url: Some(endpoint_url.into()),
            auth_token_env_var: None,
            script_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            ModelKind::RemoteEndpoint if self.endpoint_url.is_none() => {
                Err(format!("model {}: remote endpoint requires endpoint_url", self.model_id))
            }
            ModelKind::Scripted if self.script_path.is_none() => {
                Err(format!("model {}: scripted model requires script_path", self.model_id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0, max_tokens: 2048, seed: None }
    }
}

impl DecodingParams {
    pub fn sampled(temperature: f64) -> Self {
        DecodingParams { temperature, ..Self::default() }
    }

    /// Temperature-0 calls are treated as deterministic and cached.
    pub fn is_deterministic(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be a finite value >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

/// Failure reported by a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for input digest {0}")]
    ScriptMiss(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("model {model}: endpoint unreachable after {attempts} attempts: {last_error}")]
    EndpointUnreachable {
        model: String,
        attempts: u32,
        last_error: String,
    },
    #[error("model {model}: malformed response: {detail}")]
    MalformedResponse { model: String, detail: String },
    #[error("model {model}: no scripted response for input digest {digest}")]
    ScriptMiss { model: String, digest: String },
    #[error("model {model}: HTTP {status}: {body}")]
    HttpStatus { model: String, status: u16, body: String },
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("script {path}: {detail}")]
    Script { path: String, detail: String },
    #[error("response cache: {0}")]
    Cache(#[from] io::Error),
}

/// One chat model. Implementations must be safe to call concurrently.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError>;
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the message sequence alone; scripted fixtures are keyed by it.
pub fn input_digest(messages: &[ChatMessage]) -> String {
    sha256_hex(&serde_json::to_vec(messages).expect("messages serialize"))
}

/// Cache key covering the model, every message and every decoding parameter.
pub fn cache_key(model_id: &str, messages: &[ChatMessage], params: &DecodingParams) -> String {
    #[derive(Serialize)]
    struct KeyInput<'a> {
        model_id: &'a str,
        messages: &'a [ChatMessage],
        params: &'a DecodingParams,
    }
    let bytes = serde_json::to_vec(&KeyInput { model_id, messages, params }).expect("key serializes");
    sha256_hex(&bytes)
}

/// One line of a scripted-model fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub input_digest: String,
    /// Only answer requests carrying this sampling seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub response: String,
}

impl ScriptEntry {
    pub fn for_messages(messages: &[ChatMessage], response: impl Into<String>) -> Self {
        ScriptEntry { input_digest: input_digest(messages), seed: None, response: response.into() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Answers by exact lookup of the input digest, preferring an entry for the
/// request's seed over a seedless one.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: HashMap<(String, Option<u64>), String>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, String> {
        let mut responses = HashMap::new();
        for e in entries {
            if let Some(prev) = responses.insert((e.input_digest.clone(), e.seed), e.response.clone()) {
                if prev != e.response {
                    return Err(format!("conflicting responses for digest {}", e.input_digest));
                }
            }
        }
        Ok(ScriptedBackend { responses })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let script_err = |detail: String| GatewayError::Script { path: path.display().to_string(), detail };
        let entries: Vec<ScriptEntry> = crate::jsonl::read(path).map_err(|e| script_err(e.to_string()))?;
        Self::from_entries(entries).map_err(script_err)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        let digest = input_digest(messages);
        let mut key = (digest, params.seed);
        if let Some(hit) = self.responses.get(&key) {
            return Ok(hit.clone());
        }
        key.1 = None;
        self.responses.get(&key).cloned().ok_or(BackendError::ScriptMiss(key.0))
    }
}

/// Answers with a deterministic function of the messages. Handy for
/// authoring scripted fixtures together with [`RecordingBackend`].
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        Ok((self.0)(messages, params))
    }
}

/// Passes calls through and remembers every successful exchange.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    log: Mutex<Vec<(Vec<ChatMessage>, DecodingParams, String)>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        RecordingBackend { inner, log: Mutex::new(Vec::new()) }
    }

    /// Every recorded request and response, in call order.
    pub fn exchanges(&self) -> Vec<(Vec<ChatMessage>, DecodingParams, String)> {
        self.log.lock().expect("recording lock").clone()
    }

    /// Script entries sorted by digest and seed, duplicates removed. Sampled
    /// requests keep their seed; greedy ones are recorded seedless.
    pub fn script(&self) -> Vec<ScriptEntry> {
        let mut entries: Vec<ScriptEntry> = self
            .exchanges()
            .iter()
            .map(|(msgs, params, response)| ScriptEntry {
                seed: if params.is_deterministic() { None } else { params.seed },
                ..ScriptEntry::for_messages(msgs, response.clone())
            })
            .collect();
        entries.sort_by(|a, b| (&a.input_digest, a.seed).cmp(&(&b.input_digest, b.seed)));
        entries.dedup();
        entries
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        let response = self.inner.complete(messages, params)?;
        self.log
            .lock()
            .expect("recording lock")
            .push((messages.to_vec(), params.clone(), response.clone()));
        Ok(response)
    }
}

/// Chat-completion client for an HTTP+JSON endpoint.
pub struct HttpBackend {
    model_id: String,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl HttpBackend {
    pub fn new(model_id: impl Into<String>, url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { model_id: model_id.into(), url: url.into(), token, agent }
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response body.
pub fn parse_completion_body(body: &str) -> Result<String, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::MalformedResponse("empty assistant text".into()));
    }
    Ok(content.to_string())
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        let request = CompletionRequest {
            model: &self.model_id,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&request)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => parse_completion_body(&body),
            429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}"))),
            _ => Err(BackendError::Status { status, body }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub factor: f64,
    /// Relative jitter applied to each delay, e.g. 0.2 for +/-20%.
    pub jitter: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Nominal delay before retry number `retry` (0-based), without jitter.
    pub fn base_delay(&self, retry: u32) -> Duration {
        let secs = self.initial_delay.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_delay.as_secs_f64()))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let base = self.base_delay(retry).as_secs_f64();
        let scale = if self.jitter > 0.0 { 1.0 + rng.gen_range(-self.jitter..=self.jitter) } else { 1.0 };
        Duration::from_secs_f64((base * scale).min(self.max_delay.as_secs_f64()))
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct InflightLimiter {
    in_use: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InflightLimiter);

impl InflightLimiter {
    fn new(limit: usize) -> Self {
        InflightLimiter { in_use: Mutex::new(0), freed: Condvar::new(), limit: limit.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().expect("limiter lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().expect("limiter lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// One file per cache key; writes go through a temp file and a rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedResponse {
    model_id: String,
    response: String,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice::<CachedResponse>(&bytes).ok().map(|c| c.response)
    }

    pub fn put(&self, key: &str, model_id: &str, response: &str) -> io::Result<()> {
        let entry = CachedResponse { model_id: model_id.to_string(), response: response.to_string() };
        let tmp = tempfile_in(&self.dir, key)?;
        fs::write(&tmp, serde_json::to_vec(&entry).expect("cache entry serializes"))?;
        fs::rename(&tmp, self.path(key))
    }
}

fn tempfile_in(dir: &Path, key: &str) -> io::Result<PathBuf> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    Ok(dir.join(format!(".{key}.{}.{n}.tmp", std::process::id())))
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_inflight_requests: usize,
    pub retry: RetryPolicy,
    pub request_timeout: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_inflight_requests: 8,
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(120),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

pub struct Gateway {
    backends: HashMap<String, Arc<dyn ChatBackend>>,
    cache: Option<ResponseCache>,
    limiter: InflightLimiter,
    retry: RetryPolicy,
    request_timeout: Duration,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let cache = config.cache_dir.map(ResponseCache::open).transpose()?;
        Ok(Gateway {
            backends: HashMap::new(),
            cache,
            limiter: InflightLimiter::new(config.max_inflight_requests),
            retry: config.retry,
            request_timeout: config.request_timeout,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    /// Builds the backend described by `spec` and registers it under its id.
    pub fn register(&mut self, spec: &ModelSpec) -> Result<(), GatewayError> {
        spec.validate().map_err(GatewayError::InvalidSpec)?;
        let backend: Arc<dyn ChatBackend> = match spec.kind {
            ModelKind::Scripted => {
                Arc::new(ScriptedBackend::load(spec.script_path.as_deref().expect("validated"))?)
            }
            ModelKind::RemoteEndpoint => {
                let token = spec.auth_token_env_var.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(HttpBackend::new(
                    spec.model_id.clone(),
                    spec.endpoint_url.clone().expect("validated"),
                    token,
                    self.request_timeout,
                ))
            }
        };
        self.backends.insert(spec.model_id.clone(), backend);
        Ok(())
    }

    pub fn register_backend(&mut self, model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) {
        self.backends.insert(model_id.into(), backend);
    }

    pub fn has_model(&self, model_id: &str) -> bool {
        self.backends.contains_key(model_id)
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    pub fn complete(
        &self,
        model_id: &str,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if messages.iter().any(|m| m.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        let backend = self
            .backends
            .get(model_id)
            .ok_or_else(|| GatewayError::UnknownModel(model_id.to_string()))?;

        let key = match (&self.cache, params.is_deterministic()) {
            (Some(cache), true) => {
                let key = cache_key(model_id, messages, params);
                if let Some(hit) = cache.get(&key) {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(hit);
                }
                Some(key)
            }
            _ => None,
        };

        let text = self.call_with_retries(model_id, backend.as_ref(), messages, params)?;
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.put(&key, model_id, &text)?;
        }
        Ok(text)
    }

    fn call_with_retries(
        &self,
        model_id: &str,
        backend: &dyn ChatBackend,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<String, GatewayError> {
        let mut retry = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                backend.complete(messages, params)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(BackendError::Transient(msg)) => {
                    if retry >= self.retry.max_retries {
                        return Err(GatewayError::EndpointUnreachable {
                            model: model_id.to_string(),
                            attempts: retry + 1,
                            last_error: msg,
                        });
                    }
                    let delay = self.retry.delay(retry, &mut rand::thread_rng());
                    log::warn!("model {model_id}: {msg}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    retry += 1;
                }
                Err(BackendError::MalformedResponse(detail)) => {
                    return Err(GatewayError::MalformedResponse { model: model_id.to_string(), detail })
                }
                Err(BackendError::ScriptMiss(digest)) => {
                    return Err(GatewayError::ScriptMiss { model: model_id.to_string(), digest })
                }
                Err(BackendError::Status { status, body }) => {
                    return Err(GatewayError::HttpStatus { model: model_id.to_string(), status, body })
                }
            }
        }
    }
}
