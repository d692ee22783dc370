//! Chat-completion and embedding backends behind a record/replay cache.
//!
//! Every request body is canonicalized and hashed into a [`CacheKey`]. In
//! replay mode responses come only from the cache; in record mode misses go
//! to the backend and are written back; live mode bypasses the cache.

mod cache;
mod http;
mod stub;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::surprise::EmbeddingVector;

pub use cache::{canonical_request, Cache, CacheEntry, CacheHeader, CacheKey};
pub use http::{Backoff, HttpTransport, OfflineTransport, Transport, TransportError};

pub const DEFAULT_STUB_DIMENSION: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Chat,
    Embedding,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Chat => "chat",
            RequestKind::Embedding => "embedding",
        }
    }
}

/// Wire format of a backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiKind {
    /// OpenAI-compatible `chat/completions` and `embeddings` endpoints.
    #[default]
    Openai,
    /// Local deterministic backend; never uses the network.
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Replay,
    Record,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Live => "live",
            Mode::Replay => "replay",
            Mode::Record => "record",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            "record" => Ok(Mode::Record),
            _ => Err(Error::Config(format!("unknown mode {s:?}; expected live, replay or record"))),
        }
    }
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: RequestKind,
    #[serde(default)]
    pub api: ApiKind,
    #[serde(default)]
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key; empty for none.
    #[serde(default)]
    pub auth: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<usize>,
    /// Extra request fields such as temperature. Empty means backend
    /// defaults; whatever is set is recorded in cache headers.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub decoding: Map<String, Value>,
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("provider {:?}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name is empty".into());
        }
        if self.model.trim().is_empty() {
            return bad("model is empty".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout must be > 0, got {}", self.timeout_secs));
        }
        if self.api == ApiKind::Openai && self.endpoint.trim().is_empty() {
            return bad("endpoint is empty".into());
        }
        if self.dimensions == Some(0) {
            return bad("dimensions must be > 0".into());
        }
        Ok(())
    }

    fn chat(name: &str, endpoint: &str, model: &str, auth: &str) -> Self {
        ProviderConfig {
            name: name.into(),
            kind: RequestKind::Chat,
            api: ApiKind::Openai,
            endpoint: endpoint.into(),
            model: model.into(),
            auth: auth.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            dimensions: None,
            decoding: Map::new(),
        }
    }

    /// The three-judge ensemble used by default.
    pub fn default_judges() -> Vec<ProviderConfig> {
        vec![
            Self::chat(
                "claude-opus-4-6",
                "https://api.anthropic.com/v1/chat/completions",
                "claude-opus-4-6",
                "ANTHROPIC_API_KEY",
            ),
            Self::chat(
                "gpt-5.4-mini",
                "https://api.openai.com/v1/chat/completions",
                "gpt-5.4-mini",
                "OPENAI_API_KEY",
            ),
            Self::chat(
                "gemini-3-pro-preview",
                "https://generativelanguage.googleapis.com/v1beta/openai/chat/completions",
                "gemini-3-pro-preview",
                "GEMINI_API_KEY",
            ),
        ]
    }

    pub fn default_embedding() -> ProviderConfig {
        ProviderConfig {
            kind: RequestKind::Embedding,
            ..Self::chat(
                "text-multilingual-embedding-002",
                "https://generativelanguage.googleapis.com/v1beta/openai/embeddings",
                "text-multilingual-embedding-002",
                "GEMINI_API_KEY",
            )
        }
    }
}

/// Reads a provider file: either a JSON array of configs or an object with a
/// `providers` array.
pub fn load_provider_configs(path: &Path) -> Result<Vec<ProviderConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(what.clone(), e))?;
    let list = match value {
        Value::Object(mut m) if m.contains_key("providers") => m.remove("providers").unwrap_or_default(),
        other => other,
    };
    let configs: Vec<ProviderConfig> = serde_json::from_value(list).map_err(|e| Error::json(what, e))?;
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

/// A backend that answers prompts with text.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// A backend that maps text to a raw (not unitized) vector.
pub trait EmbedBackend: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// One configured backend plus its mode, cache and transport.
pub struct Provider {
    cfg: ProviderConfig,
    mode: Mode,
    cache: Option<Cache>,
    transport: Arc<dyn Transport>,
    backoff: Backoff,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("cfg", &self.cfg)
            .field("mode", &self.mode)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl Provider {
    /// Replay and record modes need a cache.
    pub fn new(cfg: ProviderConfig, mode: Mode, cache: Option<Cache>) -> Result<Self> {
        cfg.validate()?;
        if mode != Mode::Live && cache.is_none() {
            return Err(Error::Config(format!("{mode} mode needs a cache directory")));
        }
        Ok(Provider {
            cfg,
            mode,
            cache,
            transport: Arc::new(HttpTransport::new()),
            backoff: Backoff::default(),
        })
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// In live and record modes, returns the API key (if the config names
    /// one) or fails when the variable is unset. Replay needs no key.
    pub fn check_credentials(&self) -> Result<Option<String>> {
        if self.mode == Mode::Replay || self.cfg.auth.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.cfg.auth) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(Error::MissingCredential {
                provider: self.cfg.name.clone(),
                var: self.cfg.auth.clone(),
            }),
        }
    }

    fn request_body(&self, kind: RequestKind, text: &str) -> Value {
        let mut body = match kind {
            RequestKind::Chat => json!({
                "model": self.cfg.model,
                "messages": [{"role": "user", "content": text}],
            }),
            RequestKind::Embedding => {
                let mut b = json!({"model": self.cfg.model, "input": text});
                if let Some(d) = self.cfg.dimensions {
                    b["dimensions"] = json!(d);
                }
                b
            }
        };
        if kind == RequestKind::Chat {
            for (k, v) in &self.cfg.decoding {
                body[k] = v.clone();
            }
        }
        body
    }

    fn require_kind(&self, kind: RequestKind) -> Result<()> {
        if self.cfg.kind != kind {
            return Err(Error::Config(format!(
                "provider {:?} is a {} backend, not {}",
                self.cfg.name,
                self.cfg.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(())
    }

    fn bad_response(&self, message: impl Into<String>) -> Error {
        Error::BadResponse { provider: self.cfg.name.clone(), message: message.into() }
    }

    /// Returns the stored response value for `body`, fetching it when the
    /// mode allows.
    fn call(&self, kind: RequestKind, text: &str) -> Result<Value> {
        let body = self.request_body(kind, text);
        let key = CacheKey::new(&self.cfg.name, kind, &body);
        let cache = match (self.mode, &self.cache) {
            (Mode::Live, _) | (_, None) => return self.fetch(kind, text, &body),
            (_, Some(c)) => c,
        };
        if let Some(entry) = cache.get(&key)? {
            return Ok(entry.response);
        }
        if self.mode == Mode::Replay {
            return Err(Error::CacheMiss { key: key.to_string() });
        }
        let response = self.fetch(kind, text, &body)?;
        self.store(&key, body, response.clone())?;
        Ok(response)
    }

    /// Writes an entry for a request this provider would make. Useful for
    /// seeding fixtures with hand-written responses.
    pub fn store_response(&self, kind: RequestKind, text: &str, response: Value) -> Result<CacheKey> {
        let body = self.request_body(kind, text);
        let key = CacheKey::new(&self.cfg.name, kind, &body);
        self.store(&key, body, response)?;
        Ok(key)
    }

    fn store(&self, key: &CacheKey, request: Value, response: Value) -> Result<()> {
        let Some(cache) = &self.cache else {
            return Err(Error::Config("no cache directory configured".into()));
        };
        let entry = CacheEntry {
            header: CacheHeader {
                provider: self.cfg.name.clone(),
                model: self.cfg.model.clone(),
                kind: key.kind,
                recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                decoding: Value::Object(self.cfg.decoding.clone()),
            },
            request,
            response,
        };
        cache.put(key, &entry)?;
        Ok(())
    }

    fn fetch(&self, kind: RequestKind, text: &str, body: &Value) -> Result<Value> {
        let token = self.check_credentials()?;
        if self.cfg.api == ApiKind::Stub {
            return Ok(match kind {
                RequestKind::Chat => Value::String(stub::chat(&self.cfg.model, text)),
                RequestKind::Embedding => {
                    json!(stub::embed(text, self.cfg.dimensions.unwrap_or(DEFAULT_STUB_DIMENSION)))
                }
            });
        }
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let mut attempts = 0;
        let raw = loop {
            attempts += 1;
            match self.transport.post_json(&self.cfg.endpoint, token.as_deref(), body, timeout) {
                Ok(v) => break v,
                Err(e) if e.retryable && attempts <= self.cfg.max_retries => {
                    log::warn!("{}: attempt {attempts} failed: {}", self.cfg.name, e.message);
                    std::thread::sleep(self.backoff.delay(attempts - 1));
                }
                Err(e) => {
                    return Err(Error::Transport {
                        provider: self.cfg.name.clone(),
                        attempts,
                        message: e.message,
                    })
                }
            }
        };
        let extracted = match kind {
            RequestKind::Chat => raw.pointer("/choices/0/message/content").cloned(),
            RequestKind::Embedding => raw.pointer("/data/0/embedding").cloned(),
        };
        extracted.ok_or_else(|| self.bad_response(format!("unexpected {} response shape", kind.as_str())))
    }

    pub fn chat_complete(&self, prompt: &str) -> Result<String> {
        self.require_kind(RequestKind::Chat)?;
        match self.call(RequestKind::Chat, prompt)? {
            Value::String(s) => Ok(s),
            _ => Err(self.bad_response("completion is not a string")),
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.require_kind(RequestKind::Embedding)?;
        if text.trim().is_empty() {
            return Err(Error::Precondition("cannot embed empty text".into()));
        }
        let values: Vec<f64> = serde_json::from_value(self.call(RequestKind::Embedding, text)?)
            .map_err(|_| self.bad_response("embedding is not a list of numbers"))?;
        if let Some(d) = self.cfg.dimensions {
            if values.len() != d {
                return Err(Error::DimensionMismatch(d, values.len()));
            }
        }
        let v = EmbeddingVector::new(values).map_err(|_| self.bad_response("empty embedding"))?;
        if !(v.norm() > 1e-12) {
            return Err(self.bad_response(format!("backend returned a zero vector for {text:?}")));
        }
        Ok(v)
    }
}

impl ChatBackend for Provider {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        self.chat_complete(prompt)
    }
}

impl EmbedBackend for Provider {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Provider::embed(self, text)
    }
}
