//! Provider-agnostic completion and embedding interfaces.
//!
//! [`Gateway::complete`] wraps a blocking [`CompletionProvider`] call with
//! status events (start, periodic heartbeat, finish), a timeout, and
//! cooperative cancellation. The mock provider and hashing embedder make the
//! whole engine runnable offline.

mod config;
mod embed;
mod ledger;
mod mock;
mod openai;
mod tokenizer;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::AssembledPrompt;

pub use config::{GatewayConfig, PriceTable};
pub use embed::{Embedding, HashingEmbedder, HASHING_EMBEDDER_ID};
pub use ledger::{round_cost, FeatureStats, MeanStd, UsageLedger, UsageRecord};
pub use mock::{MockProvider, MockRule, MockScript, Matcher};
pub use openai::{OpenAiCompatEmbedder, OpenAiCompatProvider};
pub use tokenizer::{Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("request cancelled")]
    Cancelled,
    #[error("gateway configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Timeout => "provider_timeout",
            GatewayError::Provider(_) => "provider_error",
            GatewayError::Cancelled => "cancelled",
            GatewayError::Config(_) => "config_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCapabilities {
    pub supports_images: bool,
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub request_id: u64,
    pub prompt: AssembledPrompt,
    pub max_output_tokens: u32,
}

/// What a provider returns for one call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Usage,
    /// Provider-reported latency. Scripted for the mock.
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Measured wall-clock time of the call.
    pub wall_ms: u64,
    pub provider_id: String,
}

pub trait CompletionProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn capabilities(&self) -> ProviderCapabilities;

    /// Blocking call. Runs on a worker thread under [`Gateway::complete`].
    fn complete(&self, request: &ModelRequest) -> Result<ProviderReply, GatewayError>;
}

/// Produces unit-normalized vectors (zero for empty text).
pub trait EmbeddingProvider: Send + Sync {
    fn embedder_id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishStatus {
    Ok,
    Error,
    Cancelled,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusEvent {
    GeneratingStarted { request_id: u64 },
    Heartbeat { request_id: u64, elapsed_ms: u64 },
    GeneratingFinished { request_id: u64, status: FinishStatus },
}

/// Shared cancellation flag. Cloning shares the flag.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Poll step while waiting on a provider; bounds cancellation latency.
const POLL: Duration = Duration::from_millis(5);

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn CompletionProvider>,
    heartbeat: Duration,
    timeout: Duration,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.provider_id())
            .field("heartbeat", &self.heartbeat)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn CompletionProvider>, heartbeat_ms: u64, timeout_ms: u64) -> Self {
        Self {
            provider,
            heartbeat: Duration::from_millis(heartbeat_ms.max(1)),
            timeout: Duration::from_millis(timeout_ms),
        }
    }

    pub fn provider(&self) -> &Arc<dyn CompletionProvider> {
        &self.provider
    }

    /// Runs one completion. Emits exactly one `GeneratingStarted`, zero or
    /// more `Heartbeat`s, and exactly one `GeneratingFinished` on every path.
    pub fn complete(
        &self,
        request: ModelRequest,
        on_status: &mut dyn FnMut(StatusEvent),
        cancel: &CancelToken,
    ) -> Result<ModelResponse, GatewayError> {
        let request_id = request.request_id;
        on_status(StatusEvent::GeneratingStarted { request_id });
        let result = self.wait(request, on_status, cancel);
        let status = match &result {
            Ok(_) => FinishStatus::Ok,
            Err(GatewayError::Cancelled) => FinishStatus::Cancelled,
            Err(GatewayError::Timeout) => FinishStatus::Timeout,
            Err(_) => FinishStatus::Error,
        };
        on_status(StatusEvent::GeneratingFinished { request_id, status });
        result
    }

    fn wait(
        &self,
        request: ModelRequest,
        on_status: &mut dyn FnMut(StatusEvent),
        cancel: &CancelToken,
    ) -> Result<ModelResponse, GatewayError> {
        let request_id = request.request_id;
        let started = Instant::now();
        let deadline = started + self.timeout;
        if self.timeout.is_zero() {
            return Err(GatewayError::Timeout);
        }
        let (tx, rx) = mpsc::channel();
        let provider = Arc::clone(&self.provider);
        std::thread::Builder::new()
            .name(format!("completion-{request_id}"))
            .spawn(move || {
                let _ = tx.send(provider.complete(&request));
            })
            .map_err(|e| GatewayError::Provider(format!("spawn failed: {e}")))?;

        let mut next_beat = started + self.heartbeat;
        loop {
            if cancel.is_cancelled() {
                return Err(GatewayError::Cancelled);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(GatewayError::Timeout);
            }
            if now >= next_beat {
                on_status(StatusEvent::Heartbeat {
                    request_id,
                    elapsed_ms: now.duration_since(started).as_millis() as u64,
                });
                next_beat += self.heartbeat;
                continue;
            }
            let wait = POLL.min(next_beat - now).min(deadline - now);
            match rx.recv_timeout(wait) {
                Ok(reply) => {
                    let reply = reply?;
                    return Ok(ModelResponse {
                        text: reply.text,
                        usage: reply.usage,
                        latency_ms: reply.latency_ms,
                        wall_ms: started.elapsed().as_millis() as u64,
                        provider_id: self.provider.provider_id().to_owned(),
                    });
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(GatewayError::Provider("provider worker exited".into()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{AssembledPrompt, PromptPart};
    use crate::context::Feature;

    fn request(text: &str) -> ModelRequest {
        ModelRequest {
            request_id: 7,
            prompt: AssembledPrompt {
                system: "sys".into(),
                user_parts: vec![PromptPart::Text(text.into())],
                template_id: Some(Feature::ContextualQa),
                token_estimate: 0,
            },
            max_output_tokens: 256,
        }
    }

    fn script(latency_ms: u64, realtime: bool) -> MockScript {
        MockScript {
            rules: vec![MockRule {
                matcher: Matcher::One("agent mode".into()),
                response: "1. Press Control+Shift+I.\n2. Type a request.\n3. Review changes.".into(),
                latency_ms,
                error: None,
            }],
            default: MockRule::fallback("I am not sure."),
            realtime,
            image_tokens: 0,
            provider_id: None,
        }
    }

    fn collect(gw: &Gateway, req: ModelRequest, cancel: &CancelToken) -> (Result<ModelResponse, GatewayError>, Vec<StatusEvent>) {
        let mut events = Vec::new();
        let r = gw.complete(req, &mut |e| events.push(e), cancel);
        (r, events)
    }

    fn assert_well_ordered(events: &[StatusEvent]) {
        assert!(matches!(events.first(), Some(StatusEvent::GeneratingStarted { .. })));
        assert!(matches!(events.last(), Some(StatusEvent::GeneratingFinished { .. })));
        assert!(events[1..events.len() - 1]
            .iter()
            .all(|e| matches!(e, StatusEvent::Heartbeat { .. })));
    }

    #[test]
    fn scripted_completion() {
        let gw = Gateway::new(Arc::new(MockProvider::new(script(1200, false))), 1000, 60_000);
        let (r, events) = collect(&gw, request("How do I use the agent mode?"), &CancelToken::new());
        let r = r.unwrap();
        assert!(r.text.starts_with("1. Press Control+Shift+I."));
        assert_eq!(r.latency_ms, 1200);
        assert_eq!(r.usage.input_tokens, 1 + 7);
        assert_eq!(r.usage.output_tokens, 10);
        assert_well_ordered(&events);
        assert_eq!(
            events.last(),
            Some(&StatusEvent::GeneratingFinished { request_id: 7, status: FinishStatus::Ok })
        );
    }

    #[test]
    fn heartbeats_while_waiting() {
        let gw = Gateway::new(Arc::new(MockProvider::new(script(80, true))), 10, 60_000);
        let (r, events) = collect(&gw, request("agent mode"), &CancelToken::new());
        assert!(r.is_ok());
        assert_well_ordered(&events);
        let beats = events.iter().filter(|e| matches!(e, StatusEvent::Heartbeat { .. })).count();
        assert!(beats >= 3, "only {beats} heartbeats");
    }

    #[test]
    fn cancel_during_wait() {
        let gw = Gateway::new(Arc::new(MockProvider::new(script(5_000, true))), 1000, 60_000);
        let cancel = CancelToken::new();
        let c = cancel.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(30));
            c.cancel();
        });
        let started = Instant::now();
        let (r, events) = collect(&gw, request("agent mode"), &cancel);
        t.join().unwrap();
        assert_eq!(r.unwrap_err(), GatewayError::Cancelled);
        assert!(started.elapsed() < Duration::from_secs(2));
        assert_well_ordered(&events);
        assert_eq!(
            events.last(),
            Some(&StatusEvent::GeneratingFinished { request_id: 7, status: FinishStatus::Cancelled })
        );
    }

    #[test]
    fn zero_timeout() {
        let gw = Gateway::new(Arc::new(MockProvider::new(script(0, false))), 1000, 0);
        let (r, events) = collect(&gw, request("agent mode"), &CancelToken::new());
        assert_eq!(r.unwrap_err(), GatewayError::Timeout);
        assert_eq!(events.len(), 2);
        assert_well_ordered(&events);
    }

    #[test]
    fn scripted_error() {
        let mut s = script(0, false);
        s.rules[0].error = Some("rate limited".into());
        let gw = Gateway::new(Arc::new(MockProvider::new(s)), 1000, 1000);
        let (r, events) = collect(&gw, request("agent mode"), &CancelToken::new());
        assert_eq!(r.unwrap_err(), GatewayError::Provider("rate limited".into()));
        assert_eq!(
            events.last(),
            Some(&StatusEvent::GeneratingFinished { request_id: 7, status: FinishStatus::Error })
        );
    }
}
