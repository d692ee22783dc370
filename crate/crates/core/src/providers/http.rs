use std::time::Duration;

use serde_json::Value;

/// A failed request. `retryable` covers timeouts, connection errors, rate
/// limits and server errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub retryable: bool,
    pub message: String,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError { retryable: true, message: message.into() }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError { retryable: false, message: message.into() }
    }
}

/// Sends one JSON POST. Injected so tests can observe or forbid network use.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

/// Blocking HTTPS transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport { client: reqwest::blocking::Client::new() }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_builder() {
                TransportError::fatal(e.to_string())
            } else {
                TransportError::retryable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(500).collect::<String>());
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                TransportError::retryable(msg)
            } else {
                TransportError::fatal(msg)
            });
        }
        resp.json().map_err(|e| TransportError::fatal(format!("response is not JSON: {e}")))
    }
}

/// Transport that refuses every request; used where the network must stay
/// untouched.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn post_json(&self, url: &str, _: Option<&str>, _: &Value, _: Duration) -> Result<Value, TransportError> {
        Err(TransportError::fatal(format!("network disabled (request to {url})")))
    }
}

/// Exponential backoff capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Backoff {
    pub const NONE: Backoff = Backoff { base: Duration::ZERO, max: Duration::ZERO };

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(16)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.max)
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(500), max: Duration::from_secs(8) }
    }
}
