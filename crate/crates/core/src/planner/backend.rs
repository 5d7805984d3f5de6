//! Optional chat-style text backend: system text plus a message list in,
//! a single text out, JSON over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKEND_URL_ENV: &str = "AMMR_TEXT_BACKEND_URL";
pub const BACKEND_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

pub trait TextBackend: Send + Sync {
    /// One attempt; implementations enforce their own timeout.
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String>;
}

#[derive(Serialize)]
struct Request<'a> {
    system: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

/// Blocking HTTP client. Do not construct or drop inside an async context.
#[derive(Debug, Clone)]
pub struct HttpTextBackend {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpTextBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("text backend client: {e}")))?;
        Ok(Self {
            url: url.into(),
            client,
        })
    }

    /// Reads the endpoint from `AMMR_TEXT_BACKEND_URL`; unset or empty means
    /// lexicon-only mode.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var(BACKEND_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Self::new(url.trim(), BACKEND_TIMEOUT).map(Some),
            _ => Ok(None),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl TextBackend for HttpTextBackend {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&Request { system, messages })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Planner(format!("text backend: {e}")))?;
        let body: Response = resp
            .json()
            .map_err(|e| Error::Planner(format!("text backend reply: {e}")))?;
        Ok(body.text)
    }
}
