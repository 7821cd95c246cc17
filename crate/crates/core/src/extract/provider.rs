//! Extractor provider contract and the HTTP chat-completion implementation.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AttributeSpec, Segment};
use crate::extract::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// One attribute from retrieved segments.
    Extract,
    /// Several attributes plus supporting evidence from a whole document.
    Sample,
    /// Exemplar passages for an attribute, used when no evidence was found.
    Synthesize,
}

/// A provider call. Structured fields travel alongside the rendered prompt so
/// offline providers can answer without parsing text.
#[derive(Debug, Clone)]
pub struct ProviderRequest<'a> {
    pub kind: RequestKind,
    pub doc_id: &'a str,
    pub attributes: &'a [AttributeSpec],
    pub segments: &'a [&'a Segment],
    pub prompt: String,
    pub exemplars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub text: String,
    pub input_tokens: usize,
    pub output_tokens: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

pub trait Provider: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<ProviderResponse, ProviderError>;
}

pub const ENV_URL: &str = "QUEST_PROVIDER_URL";
pub const ENV_MODEL: &str = "QUEST_MODEL";
pub const ENV_API_KEY: &str = "QUEST_API_KEY";

const SYSTEM_PROMPT: &str = "You extract structured values from text. Reply with JSON only.";

/// Chat-completion endpoint (`{"model", "messages"}` → `{"choices": [...]}`).
pub struct HttpProvider {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    tokenizer: std::sync::Arc<dyn Tokenizer>,
}

impl HttpProvider {
    pub fn new(url: &str, model: &str, api_key: Option<String>, tokenizer: std::sync::Arc<dyn Tokenizer>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            url: url.to_string(),
            model: model.to_string(),
            api_key,
            agent,
            tokenizer,
        }
    }

    /// Reads the endpoint, model and key from the environment.
    pub fn from_env(tokenizer: std::sync::Arc<dyn Tokenizer>) -> Result<Self, ProviderError> {
        let url = std::env::var(ENV_URL).map_err(|_| ProviderError::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        Ok(Self::new(&url, &model, std::env::var(ENV_API_KEY).ok(), tokenizer))
    }
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: usize,
    completion_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<ProviderResponse, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": req.prompt},
            ],
        });
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(status) => ProviderError::Status {
                status,
                body: String::new(),
            },
            other => ProviderError::Transport(other.to_string()),
        })?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
        let (input_tokens, output_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                self.tokenizer.count(SYSTEM_PROMPT) + self.tokenizer.count(&req.prompt),
                self.tokenizer.count(&text),
            ),
        };
        Ok(ProviderResponse {
            text,
            input_tokens,
            output_tokens,
        })
    }
}
