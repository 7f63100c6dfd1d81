//! Newline-delimited JSON protocol between the engine and its clients.
//!
//! Three message kinds share one line-oriented stream:
//!
//! ```text
//! {"kind":"request","id":1,"op":"ask","payload":{"question":"..."}}
//! {"kind":"event","session":"s1","event":"generating_started","request_id":1,"payload":{}}
//! {"kind":"response","id":1,"op":"ask","ok":true,"payload":{...}}
//! ```
//!
//! Every request line gets exactly one response echoing its id. Events
//! produced while serving a request precede its response. Blank lines are
//! ignored. See `docs/protocol.md` for the full schema.

mod connection;
mod server;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use connection::{parse_request, Connection};
pub use server::{serve_stdio, serve_stream, serve_unix};

/// Longest accepted request line in bytes.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Ask,
    Adaptive,
    Describe,
    StepNext,
    StepPrev,
    ConvPrev,
    ConvNext,
    Cancel,
    ClearHistory,
    GetHistory,
    GetStatus,
    Dismiss,
}

impl Op {
    pub const ALL: [Op; 12] = [
        Op::Ask,
        Op::Adaptive,
        Op::Describe,
        Op::StepNext,
        Op::StepPrev,
        Op::ConvPrev,
        Op::ConvNext,
        Op::Cancel,
        Op::ClearHistory,
        Op::GetHistory,
        Op::GetStatus,
        Op::Dismiss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Ask => "ask",
            Op::Adaptive => "adaptive",
            Op::Describe => "describe",
            Op::StepNext => "step_next",
            Op::StepPrev => "step_prev",
            Op::ConvPrev => "conv_prev",
            Op::ConvNext => "conv_next",
            Op::Cancel => "cancel",
            Op::ClearHistory => "clear_history",
            Op::GetHistory => "get_history",
            Op::GetStatus => "get_status",
            Op::Dismiss => "dismiss",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|o| o.as_str() == s)
    }

    /// Ops that call the model and hold the session until they finish.
    pub fn is_generation(self) -> bool {
        matches!(self, Op::Ask | Op::Adaptive | Op::Describe)
    }

    /// Ops answered immediately even while a generation is running.
    pub fn is_inline(self) -> bool {
        matches!(self, Op::Cancel | Op::GetStatus)
    }
}

/// A parsed request line.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    /// Client correlation id: a JSON number or string, echoed verbatim.
    pub id: Value,
    pub op: Op,
    pub payload: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub kind: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn ok(id: Value, op: Op, payload: Value) -> Self {
        Self {
            kind: "response".into(),
            id,
            op: Some(op.as_str().into()),
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn err(id: Value, op: Option<&str>, code: &str, message: impl Into<String>) -> Self {
        Self {
            kind: "response".into(),
            id,
            op: op.map(str::to_owned),
            ok: false,
            payload: None,
            error: Some(ErrorBody {
                code: code.into(),
                message: message.into(),
            }),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub kind: String,
    pub session: String,
    pub event: String,
    /// Id of the request that caused the event; null for out-of-band events.
    pub request_id: Value,
    pub payload: Value,
}

impl EventMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Protocol-level error codes. Session and provider failures reuse the
/// orchestrator's codes (`busy`, `empty_question`, `no_guidance_available`,
/// `provider_timeout`, `provider_error`, `cancelled`, `internal`).
pub mod codes {
    pub const PARSE: &str = "parse";
    pub const UNKNOWN_OP: &str = "unknown_op";
    pub const INVALID_PARAMS: &str = "invalid_params";
    pub const BUSY: &str = "busy";
    pub const INTERNAL: &str = "internal";
}

/// Any message line, for clients and tests that read the stream back.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Response(Response),
    Event(EventMessage),
}

impl Incoming {
    pub fn parse(line: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match v.get("kind").and_then(Value::as_str) {
            Some("response") => serde_json::from_value(v).map(Incoming::Response).map_err(|e| e.to_string()),
            Some("event") => serde_json::from_value(v).map(Incoming::Event).map_err(|e| e.to_string()),
            other => Err(format!("unexpected kind {other:?}")),
        }
    }
}
