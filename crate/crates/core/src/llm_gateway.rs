//! Single-turn chat completion client and its offline stub.
//!
//! This is the only place that opens network connections. Callers get a
//! [`Gateway`] handle and never see the transport.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Stub,
    #[default]
    Disabled,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(GatewayMode::Live),
            "stub" => Ok(GatewayMode::Stub),
            "disabled" | "off" => Ok(GatewayMode::Disabled),
            other => Err(format!("unknown gateway mode {other:?} (live, stub, disabled)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub timeout_secs: u64,
    pub fixtures: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Disabled,
            endpoint: None,
            model: "gpt-4.1".to_string(),
            credential_env: "WHYNOT_LLM_API_KEY".to_string(),
            timeout_secs: 30,
            fixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("language model unavailable: {0}")]
    GatewayUnavailable(String),
    #[error("no stub fixture for prompt hash {0}")]
    FixtureMissing(String),
    #[error("language model rejected the credential (HTTP {0})")]
    AuthFailure(u16),
    #[error("gateway misconfigured: {0}")]
    Config(String),
    #[error("gateway is disabled")]
    Disabled,
}

/// Stable fixture key: SHA-256 of the prompt with trailing whitespace removed.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.trim_end().as_bytes()))
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// One line of a stub fixture file.
pub fn fixture_line(prompt: &str, response: &str) -> String {
    format!("{}\t{}", prompt_hash(prompt), escape(response))
}

/// Parses fixture text: `<hash>\t<escaped response>` per line; blank lines
/// and `#` comments are skipped.
pub fn parse_fixtures(text: &str) -> Result<BTreeMap<String, String>, GatewayError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (hash, body) = line
            .split_once('\t')
            .ok_or_else(|| GatewayError::Config(format!("fixture line {} has no tab", n + 1)))?;
        map.insert(hash.trim().to_string(), unescape(body));
    }
    Ok(map)
}

#[derive(Clone, Debug)]
enum Backend {
    Disabled,
    Stub(BTreeMap<String, String>),
    #[cfg_attr(not(feature = "live-gateway"), allow(dead_code))]
    Live {
        endpoint: String,
        model: String,
        key: String,
        timeout: Duration,
    },
}

/// Shareable completion handle.
#[derive(Clone, Debug)]
pub struct Gateway {
    backend: Backend,
}

impl Gateway {
    pub fn disabled() -> Self {
        Gateway {
            backend: Backend::Disabled,
        }
    }

    /// A stub over (prompt, response) pairs.
    pub fn stub<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Gateway {
            backend: Backend::Stub(
                pairs
                    .into_iter()
                    .map(|(p, r)| (prompt_hash(p), r.to_string()))
                    .collect(),
            ),
        }
    }

    pub fn stub_from_fixtures(text: &str) -> Result<Self, GatewayError> {
        Ok(Gateway {
            backend: Backend::Stub(parse_fixtures(text)?),
        })
    }

    /// Builds a gateway from configuration. Live mode reads the credential
    /// from the configured environment variable now.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        match config.mode {
            GatewayMode::Disabled => Ok(Gateway::disabled()),
            GatewayMode::Stub => {
                let path = config
                    .fixtures
                    .as_deref()
                    .ok_or_else(|| GatewayError::Config("stub mode needs a fixture file".into()))?;
                Gateway::stub_from_fixtures(&read_fixture_file(path)?)
            }
            GatewayMode::Live => {
                let endpoint = config
                    .endpoint
                    .clone()
                    .ok_or_else(|| GatewayError::Config("live mode needs an endpoint".into()))?;
                let key = std::env::var(&config.credential_env).map_err(|_| {
                    GatewayError::Config(format!(
                        "live mode needs the {} environment variable",
                        config.credential_env
                    ))
                })?;
                Ok(Gateway {
                    backend: Backend::Live {
                        endpoint,
                        model: config.model.clone(),
                        key,
                        timeout: Duration::from_secs(config.timeout_secs.max(1)),
                    },
                })
            }
        }
    }

    pub fn live(endpoint: &str, model: &str, key: &str, timeout: Duration) -> Self {
        Gateway {
            backend: Backend::Live {
                endpoint: endpoint.to_string(),
                model: model.to_string(),
                key: key.to_string(),
                timeout,
            },
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self.backend, Backend::Disabled)
    }

    pub fn mode(&self) -> GatewayMode {
        match self.backend {
            Backend::Disabled => GatewayMode::Disabled,
            Backend::Stub(_) => GatewayMode::Stub,
            Backend::Live { .. } => GatewayMode::Live,
        }
    }

    /// Sends one prompt and returns the model's reply text verbatim.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        match &self.backend {
            Backend::Disabled => Err(GatewayError::Disabled),
            Backend::Stub(map) => {
                let h = prompt_hash(prompt);
                map.get(&h).cloned().ok_or(GatewayError::FixtureMissing(h))
            }
            Backend::Live {
                endpoint,
                model,
                key,
                timeout,
            } => live_complete(endpoint, model, key, *timeout, prompt),
        }
    }
}

fn read_fixture_file(path: &Path) -> Result<String, GatewayError> {
    std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))
}

#[cfg(feature = "live-gateway")]
#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[cfg(feature = "live-gateway")]
#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[cfg(feature = "live-gateway")]
#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[cfg(feature = "live-gateway")]
#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[cfg(feature = "live-gateway")]
#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

#[cfg(feature = "live-gateway")]
fn live_complete(
    endpoint: &str,
    model: &str,
    key: &str,
    timeout: Duration,
    prompt: &str,
) -> Result<String, GatewayError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::GatewayUnavailable(e.to_string()))?;
    let body = ChatRequest {
        model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
    };
    let mut last = String::new();
    for _attempt in 0..2 {
        let response = match client.post(endpoint).bearer_auth(key).json(&body).send() {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            return Err(GatewayError::AuthFailure(status));
        }
        if status >= 500 {
            last = format!("HTTP {status}");
            continue;
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::GatewayUnavailable(format!("HTTP {status}")));
        }
        let text = response
            .text()
            .map_err(|e| GatewayError::GatewayUnavailable(e.to_string()))?;
        return extract_reply(&text);
    }
    Err(GatewayError::GatewayUnavailable(last))
}

#[cfg(not(feature = "live-gateway"))]
fn live_complete(
    _endpoint: &str,
    _model: &str,
    _key: &str,
    _timeout: Duration,
    _prompt: &str,
) -> Result<String, GatewayError> {
    Err(GatewayError::GatewayUnavailable(
        "built without the live-gateway feature".into(),
    ))
}

#[cfg(feature = "live-gateway")]
fn extract_reply(body: &str) -> Result<String, GatewayError> {
    let parsed: ChatResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::GatewayUnavailable(format!("unreadable response: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| GatewayError::GatewayUnavailable("response has no choices".into()))
}

/// Renders a stub fixture file from pairs, one line each.
pub fn render_fixtures<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (p, r) in pairs {
        let _ = writeln!(out, "{}", fixture_line(p, r));
    }
    out
}
