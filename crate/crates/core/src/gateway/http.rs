use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use super::{ChatProvider, ChatRequest, ChatResponse, EndpointConfig, ProviderError, TokenUsage};

/// Client for one chat-completions endpoint.
///
/// Retries 429, 5xx, timeouts and connection failures with full-jitter
/// exponential backoff (`uniform(0, base * 2^attempt)`). At most
/// `max_concurrent` requests are in flight at once; a permit is held for a
/// single attempt, not across backoff sleeps.
pub struct HttpChatClient {
    cfg: EndpointConfig,
    url: String,
    api_key: Option<String>,
    http: reqwest::Client,
    gate: Arc<Semaphore>,
    rng: Mutex<StdRng>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: WireContent<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireContent<'a> {
    Text(&'a str),
    Parts(Vec<WirePart<'a>>),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: WireImage<'a> },
}

#[derive(Serialize)]
struct WireImage<'a> {
    url: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Value,
}

fn reply_text(content: &Value) -> Option<String> {
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

enum Attempt {
    Done(ChatResponse),
    Fatal(ProviderError),
    Retry(String),
}

impl HttpChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ProviderError> {
        Self::build(cfg, StdRng::from_os_rng())
    }

    /// Deterministic backoff jitter.
    pub fn with_seed(cfg: EndpointConfig, seed: u64) -> Result<Self, ProviderError> {
        Self::build(cfg, StdRng::seed_from_u64(seed))
    }

    fn build(cfg: EndpointConfig, rng: StdRng) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        Ok(Self {
            gate: Arc::new(Semaphore::new(cfg.max_concurrent)),
            cfg,
            url,
            api_key,
            http,
            rng: Mutex::new(rng),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn wire<'a>(&'a self, req: &'a ChatRequest) -> WireRequest<'a> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &req.system {
            messages.push(WireMessage {
                role: "system",
                content: WireContent::Text(system),
            });
        }
        let content = if req.image_refs.is_empty() {
            WireContent::Text(&req.user)
        } else {
            let mut parts = vec![WirePart::Text { text: &req.user }];
            parts.extend(req.image_refs.iter().map(|url| WirePart::ImageUrl {
                image_url: WireImage { url },
            }));
            WireContent::Parts(parts)
        };
        messages.push(WireMessage {
            role: "user",
            content,
        });
        WireRequest {
            model: &self.cfg.model_name,
            messages,
            temperature: req.temperature.unwrap_or(self.cfg.temperature),
            top_p: req.top_p.unwrap_or(self.cfg.top_p),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self.cfg.backoff_base_secs * 2f64.powi(attempt.min(30) as i32);
        if cap <= 0.0 {
            return Duration::ZERO;
        }
        let secs = self.rng.lock().expect("rng lock").random_range(0.0..=cap);
        Duration::from_secs_f64(secs)
    }

    async fn attempt(&self, body: &WireRequest<'_>, attempts: u32) -> Attempt {
        let _permit = self.gate.acquire().await.expect("gate closed");
        let mut call = self.http.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = match call.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {}: {}", status.as_u16(), text));
        }
        if !status.is_success() {
            return Attempt::Fatal(ProviderError::Status {
                attempts,
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(ProviderError::Parse {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        match parsed.choices.first().and_then(|c| reply_text(&c.message.content)) {
            Some(text) => Attempt::Done(ChatResponse {
                text,
                usage: parsed.usage.unwrap_or_default(),
                attempts,
            }),
            None => Attempt::Fatal(ProviderError::Parse {
                attempts,
                message: "response has no message content".into(),
            }),
        }
    }
}

#[async_trait]
impl ChatProvider for HttpChatClient {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if req.user.trim().is_empty() {
            return Err(ProviderError::Config("user text is empty".into()));
        }
        let body = self.wire(req);
        let max_attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..max_attempts {
            match self.attempt(&body, attempt + 1).await {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry(why) => {
                    tracing::debug!(url = %self.url, attempt = attempt + 1, %why, "retrying");
                    last = why;
                }
            }
            if attempt + 1 < max_attempts {
                tokio::time::sleep(self.backoff(attempt)).await;
            }
        }
        Err(ProviderError::Exhausted {
            attempts: max_attempts,
            last,
        })
    }
}
