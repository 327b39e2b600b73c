//! JSON-over-HTTP client shared by the remote logits, embedding and NLI
//! backends.
//!
//! Wire protocol: `POST <endpoint>/v1/<route>` with a JSON body; success is
//! any 2xx status with a JSON body, failures carry `{"error": string}` with a
//! non-2xx status. Connection failures and 5xx responses are retried; every
//! other failure is reported immediately.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_backoff_ms() -> u64 {
    100
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            retries: default_retries(),
            timeout_ms: default_timeout_ms(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_backoff_ms(mut self, backoff_ms: u64) -> Self {
        self.backoff_ms = backoff_ms;
        self
    }

    /// Checks that the endpoint is an absolute `http(s)` URL.
    pub fn validate(&self) -> Result<(), String> {
        let rest = self
            .endpoint
            .strip_prefix("http://")
            .or_else(|| self.endpoint.strip_prefix("https://"))
            .ok_or_else(|| format!("endpoint `{}` must start with http:// or https://", self.endpoint))?;
        let host = rest.split('/').next().unwrap_or("");
        if host.is_empty() || host.contains(char::is_whitespace) {
            return Err(format!("endpoint `{}` has no valid host", self.endpoint));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RemoteError {
    #[error("{url}: unreachable after {attempts} attempt(s): {message}")]
    Network {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{url}: protocol error: {message}")]
    Protocol { url: String, message: String },
    #[error("{url}: server returned {status}: {message}")]
    Status {
        url: String,
        status: u16,
        message: String,
    },
}

impl RemoteError {
    /// Whether retrying later could succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, RemoteError::Network { .. })
    }

    pub fn protocol(url: &str, message: impl Into<String>) -> Self {
        RemoteError::Protocol {
            url: url.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Blocking JSON client with bounded retries.
#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    config: RemoteConfig,
}

enum Attempt<T> {
    Done(Result<T, RemoteError>),
    Retry(String),
}

impl HttpClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn url(&self, route: &str) -> String {
        format!(
            "{}/{}",
            self.config.endpoint.trim_end_matches('/'),
            route.trim_start_matches('/')
        )
    }

    /// POSTs `body` to `route` and decodes the JSON response.
    pub fn post<Req, Resp>(&self, route: &str, body: &Req) -> Result<Resp, RemoteError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let url = self.url(route);
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&url, body) {
                Attempt::Done(result) => return result,
                Attempt::Retry(message) => last = message,
            }
            if attempt < attempts {
                thread::sleep(Duration::from_millis(self.config.backoff_ms * attempt as u64));
            }
        }
        Err(RemoteError::Network {
            url,
            attempts,
            message: last,
        })
    }

    fn attempt<Req, Resp>(&self, url: &str, body: &Req) -> Attempt<Resp>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let mut response = match self.agent.post(url).send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if (500..600).contains(&status) {
            return Attempt::Retry(format!("status {status}: {}", error_message(&text)));
        }
        if !(200..300).contains(&status) {
            return Attempt::Done(Err(RemoteError::Status {
                url: url.to_string(),
                status,
                message: error_message(&text),
            }));
        }
        Attempt::Done(
            serde_json::from_str(&text)
                .map_err(|e| RemoteError::protocol(url, format!("bad response body: {e}"))),
        )
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        assert!(RemoteConfig::new("http://localhost:8080").validate().is_ok());
        assert!(RemoteConfig::new("https://models.internal/api").validate().is_ok());
        assert!(RemoteConfig::new("localhost:8080").validate().is_err());
        assert!(RemoteConfig::new("http://").validate().is_err());
    }

    #[test]
    fn url_joining() {
        let c = HttpClient::new(RemoteConfig::new("http://h:1/"));
        assert_eq!(c.url("/v1/nli"), "http://h:1/v1/nli");
    }

    #[test]
    fn error_body_extraction() {
        assert_eq!(error_message("{\"error\":\"boom\"}"), "boom");
        assert_eq!(error_message("plain"), "plain");
    }
}
