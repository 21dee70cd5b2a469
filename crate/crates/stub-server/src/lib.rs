//! A local chat-completions endpoint whose replies come from a closure.
//!
//! Serves `POST /chat/completions` and `POST /v1/chat/completions` on an
//! ephemeral loopback port, records every request body and tracks the peak
//! number of requests in flight.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// What the stub sends back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    /// A well-formed completion carrying this assistant text.
    Text(String),
    /// A bare status code with a plain-text body.
    Status(u16, String),
    /// A 200 response with this literal body.
    Raw(String),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }
}

type Handler = dyn Fn(&Value) -> Reply + Send + Sync;

struct Shared {
    handler: Box<Handler>,
    requests: Mutex<Vec<Value>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    delay: Duration,
}

pub struct StubServer {
    base_url: String,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
}

/// Concatenated text of the last user message in a request body.
pub fn user_text(body: &Value) -> String {
    let Some(msg) = body["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
    else {
        return String::new();
    };
    match &msg["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    }
}

async fn complete(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> Response {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak.fetch_max(now, Ordering::SeqCst);
    if !shared.delay.is_zero() {
        tokio::time::sleep(shared.delay).await;
    }
    let reply = (shared.handler)(&body);
    shared.requests.lock().expect("request log").push(body);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        Reply::Text(text) => Json(json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop"
            }],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
        }))
        .into_response(),
        Reply::Status(code, body) => {
            let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (code, body).into_response()
        }
        Reply::Raw(body) => (StatusCode::OK, body).into_response(),
    }
}

impl StubServer {
    /// Binds 127.0.0.1 on a free port and starts serving on the current
    /// tokio runtime.
    pub async fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&Value) -> Reply + Send + Sync + 'static,
    {
        Self::start_with_delay(handler, Duration::ZERO).await
    }

    /// Like [`StubServer::start`], sleeping `delay` before each reply.
    pub async fn start_with_delay<F>(handler: F, delay: Duration) -> std::io::Result<Self>
    where
        F: Fn(&Value) -> Reply + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared {
            handler: Box::new(handler),
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            delay,
        });
        let app = Router::new()
            .route("/chat/completions", post(complete))
            .route("/v1/chat/completions", post(complete))
            .with_state(shared.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            base_url: format!("http://{addr}/v1"),
            shared,
            shutdown: Some(tx),
        })
    }

    /// Base URL ending in `/v1`.
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Request bodies received so far, in completion order.
    pub fn requests(&self) -> Vec<Value> {
        self.shared.requests.lock().expect("request log").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().expect("request log").len()
    }

    /// Highest number of requests that were being handled at once.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
