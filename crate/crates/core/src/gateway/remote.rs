//! OpenAI-compatible chat-completions client.
//!
//! One struct serves both the general-purpose model and any fine-tuned
//! variants: point an override at a different base URL or model name.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendFailure, ChatBackend, LlmRequest};

/// Connection settings, normally read from `RAPO_LLM_BASE_URL`,
/// `RAPO_LLM_API_KEY` (optional) and `RAPO_LLM_MODEL`.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
}

pub const DEFAULT_CHAT_MODEL: &str = "default";

impl RemoteConfig {
    /// Errors with a readable message when `RAPO_LLM_BASE_URL` is unset.
    /// The model name defaults to "default", which self-hosted
    /// OpenAI-compatible servers commonly accept.
    pub fn from_env() -> Result<Self, String> {
        let base_url = std::env::var("RAPO_LLM_BASE_URL")
            .map_err(|_| "RAPO_LLM_BASE_URL is not set (or pass --fixtures for offline runs)".to_string())?;
        Ok(Self {
            base_url,
            api_key: std::env::var("RAPO_LLM_API_KEY").ok(),
            model: std::env::var("RAPO_LLM_MODEL").unwrap_or_else(|_| DEFAULT_CHAT_MODEL.to_string()),
        })
    }
}

pub struct RemoteChatBackend {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key: config.api_key,
            model: config.model,
        }
    }
}

#[async_trait]
impl ChatBackend for RemoteChatBackend {
    fn id(&self) -> &str {
        &self.model
    }

    async fn complete(&self, request: &LlmRequest) -> Result<String, BackendFailure> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.rendered_prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| BackendFailure::Transient(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let reason = format!("{url} returned status {status}");
            // Rate limits, timeouts and server errors are worth retrying;
            // the rest (auth, bad request) will not improve.
            return if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error()
            {
                Err(BackendFailure::Transient(reason))
            } else {
                Err(BackendFailure::Permanent(reason))
            };
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| BackendFailure::Permanent(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendFailure::Permanent("response has no message content".to_string()))
    }
}
