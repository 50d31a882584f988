//! Obtaining edit proposals from a chat-completions style HTTP endpoint,
//! a JSON file, or a canned stub.

use std::path::PathBuf;
use std::time::Duration;

use serde_json::{json, Value};

use super::{load_proposal, EditProposal, ProposalSource};
use crate::error::{Error, Result};

/// System message pinning the response to the edit schema.
pub const JSON_INSTRUCTION: &str = "Answer only with a JSON object of the form {\"edits\":[{\"class\":<int>,\"concept\":<int>,\"delta\":<float>}]} where class and concept are the integer indices from the question and delta is the signed weight change (positive to increase, negative to decrease).";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub base_url: String,
    pub model: String,
    /// Environment variable that holds the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub const URL_ENV: &'static str = "UCBM_ENDPOINT_URL";
    pub const MODEL_ENV: &'static str = "UCBM_MODEL";
    pub const DEFAULT_KEY_ENV: &'static str = "UCBM_API_KEY";

    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: Self::DEFAULT_KEY_ENV.into(),
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads `UCBM_ENDPOINT_URL` and `UCBM_MODEL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(Self::URL_ENV)
            .map_err(|_| Error::InvalidConfig(format!("{} is not set", Self::URL_ENV)))?;
        let model = std::env::var(Self::MODEL_ENV)
            .map_err(|_| Error::InvalidConfig(format!("{} is not set", Self::MODEL_ENV)))?;
        Ok(Self::new(url, model))
    }

    pub fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalProvider {
    Stub(EditProposal),
    File(PathBuf),
    Endpoint(EndpointConfig),
}

/// Obtains a proposal for `payload` and validates it against a head with
/// `num_classes × k` weights.
pub fn fetch_proposal(
    payload: &str,
    provider: &ProposalProvider,
    num_classes: usize,
    k: usize,
) -> Result<EditProposal> {
    match provider {
        ProposalProvider::Stub(canned) => {
            canned.validate(num_classes, k)?;
            Ok(EditProposal {
                source: ProposalSource::Stub,
                ..canned.clone()
            })
        }
        ProposalProvider::File(path) => load_proposal(path, num_classes, k),
        ProposalProvider::Endpoint(cfg) => {
            let content = post_chat(payload, cfg)?;
            let json = extract_json(&content).ok_or_else(|| Error::Schema {
                message: "response contains no JSON object".into(),
                raw: content.clone(),
            })?;
            let mut proposal =
                EditProposal::from_json(json, ProposalSource::Endpoint, num_classes, k).map_err(
                    |e| match e {
                        Error::Schema { message, .. } => Error::Schema {
                            message,
                            raw: content.clone(),
                        },
                        other => other,
                    },
                )?;
            proposal.raw_response = Some(content);
            Ok(proposal)
        }
    }
}

fn post_chat(payload: &str, cfg: &EndpointConfig) -> Result<String> {
    let body = json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": JSON_INSTRUCTION},
            {"role": "user", "content": payload},
        ],
    });
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut request = agent.post(cfg.url());
    if let Ok(token) = std::env::var(&cfg.api_key_env) {
        request = request.header("Authorization", format!("Bearer {token}"));
    }
    let mut response = request
        .send_json(&body)
        .map_err(|e| Error::Endpoint(e.to_string()))?;
    let status = response.status();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::Endpoint(e.to_string()))?;
    if !status.is_success() {
        return Err(Error::Endpoint(format!("HTTP {}: {text}", status.as_u16())));
    }
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
        message: format!("response body is not JSON: {e}"),
        raw: text.clone(),
    })?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Schema {
            message: "response lacks choices[0].message.content".into(),
            raw: text,
        })
}

/// The outermost `{ … }` span of the message, which also strips Markdown
/// code fences.
fn extract_json(content: &str) -> Option<&str> {
    let start = content.find('{')?;
    let end = content.rfind('}')?;
    (end > start).then(|| &content[start..=end])
}
