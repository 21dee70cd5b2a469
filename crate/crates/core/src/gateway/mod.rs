//! Chat-completion clients for the annotator and logic-checker models.

mod http;
mod prompt;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpChatClient;
pub use prompt::{render_prompt, PromptError, PromptTemplates};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        attempts: u32,
        status: u16,
        body: String,
    },
    #[error("unparseable response after {attempts} attempt(s): {message}")]
    Parse { attempts: u32, message: String },
    #[error("gave up after {attempts} attempt(s); last failure: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("endpoint misconfigured: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn attempts(&self) -> u32 {
        match self {
            ProviderError::Transport { attempts, .. }
            | ProviderError::Status { attempts, .. }
            | ProviderError::Parse { attempts, .. }
            | ProviderError::Exhausted { attempts, .. } => *attempts,
            ProviderError::Config(_) => 0,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    0.5
}
fn default_max_concurrent() -> usize {
    8
}
fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    1.0
}

/// One chat-completions endpoint. Keys are never stored here, only the name
/// of the environment variable holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
            backoff_base_secs: default_backoff(),
            max_concurrent: default_max_concurrent(),
            temperature: default_temperature(),
            top_p: default_top_p(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.base_url.trim().is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ProviderError::Config("timeout_secs must be > 0".into()));
        }
        if !(self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0) {
            return Err(ProviderError::Config("backoff_base_secs must be >= 0".into()));
        }
        if self.max_concurrent == 0 {
            return Err(ProviderError::Config("max_concurrent must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    /// Image URLs or `data:` URIs.
    pub image_refs: Vec<String>,
    /// Overrides the endpoint default when set.
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
}

impl ChatRequest {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            user: text.into(),
            ..Default::default()
        }
    }

    pub fn with_system(mut self, text: impl Into<String>) -> Self {
        self.system = Some(text.into());
        self
    }

    pub fn with_images(mut self, refs: impl IntoIterator<Item = String>) -> Self {
        self.image_refs.extend(refs);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    /// HTTP attempts spent, including the successful one.
    pub attempts: u32,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

#[async_trait]
impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(req).await
    }
}

#[async_trait]
impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(req).await
    }
}
