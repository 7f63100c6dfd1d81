use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Serialize;
use serde_json::{json, Value};

use super::{codes, EventMessage, Op, Request, Response, MAX_LINE_BYTES};
use crate::session::{Session, SessionControl, SessionError, SessionEvent};

/// Parses one request line. `Ok(None)` for a blank line; `Err` carries the
/// error response to send back.
#[allow(clippy::result_large_err)]
pub fn parse_request(line: &str) -> Result<Option<Request>, Response> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    if line.len() > MAX_LINE_BYTES {
        return Err(Response::err(Value::Null, None, codes::PARSE, "line too long"));
    }
    let v: Value = serde_json::from_str(line)
        .map_err(|e| Response::err(Value::Null, None, codes::PARSE, format!("invalid JSON: {e}")))?;
    let Value::Object(mut obj) = v else {
        return Err(Response::err(Value::Null, None, codes::PARSE, "message must be a JSON object"));
    };
    let id = match obj.remove("id") {
        Some(id @ (Value::Number(_) | Value::String(_))) => id,
        _ => return Err(Response::err(Value::Null, None, codes::PARSE, "id must be a number or string")),
    };
    if obj.get("kind").and_then(Value::as_str) != Some("request") {
        return Err(Response::err(id, None, codes::PARSE, "kind must be \"request\""));
    }
    let op_name = match obj.get("op") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(Response::err(id, None, codes::PARSE, "op must be a string")),
    };
    let Some(op) = Op::parse(&op_name) else {
        return Err(Response::err(id, Some(&op_name), codes::UNKNOWN_OP, format!("unknown op {op_name:?}")));
    };
    let payload = match obj.remove("payload") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => {
            return Err(Response::err(id, Some(&op_name), codes::INVALID_PARAMS, "payload must be an object"))
        }
    };
    Ok(Some(Request { id, op, payload }))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol payload serializes")
}

fn session_error(id: Value, op: Op, e: &SessionError) -> Response {
    Response::err(id, Some(op.as_str()), e.code(), e.to_string())
}

/// Serves one client over one session. Synchronous: events and the
/// response of a request are produced before `handle_line` returns. The
/// threaded server wraps this to keep `cancel` and `get_status` live.
pub struct Connection {
    session: Session,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection").field("session", &self.session.id()).finish()
    }
}

impl Connection {
    pub fn new(session: Session) -> Self {
        Self { session }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }

    pub fn control(&self) -> SessionControl {
        self.session.control()
    }

    /// Lines to send when the connection opens: an `error` event if the
    /// screen-reader trace could not be attached.
    pub fn greeting(&self) -> Vec<String> {
        self.session
            .trace_error()
            .map(|e| {
                self.out_of_band(json!({
                    "code": "trace_unavailable",
                    "message": e,
                }))
                .to_line()
            })
            .into_iter()
            .collect()
    }

    fn out_of_band(&self, payload: Value) -> EventMessage {
        EventMessage {
            kind: "event".into(),
            session: self.session.id().to_owned(),
            event: "error".into(),
            request_id: Value::Null,
            payload,
        }
    }

    /// Handles one input line and returns the output lines in order.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.handle_line_with(line, &mut |l| out.push(l));
        out
    }

    pub fn handle_line_with(&mut self, line: &str, emit: &mut dyn FnMut(String)) {
        match parse_request(line) {
            Ok(None) => {}
            Ok(Some(req)) => self.handle_request(req, emit),
            Err(resp) => emit(resp.to_line()),
        }
    }

    /// Dispatches a parsed request. A panic inside the engine is reported
    /// as an `error` event plus an `internal` response; the connection
    /// stays usable.
    pub fn handle_request(&mut self, req: Request, emit: &mut dyn FnMut(String)) {
        let id = req.id.clone();
        let op = req.op;
        let result = catch_unwind(AssertUnwindSafe(|| self.dispatch(req, &mut *emit)));
        if let Err(panic) = result {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "engine panic".into());
            emit(self.out_of_band(json!({"code": codes::INTERNAL, "message": msg})).to_line());
            emit(Response::err(id, Some(op.as_str()), codes::INTERNAL, msg).to_line());
        }
    }

    fn dispatch(&mut self, req: Request, emit: &mut dyn FnMut(String)) {
        let Request { id, op, payload } = req;
        let session_id = self.session.id().to_owned();
        let event_id = id.clone();
        let mut sink = |e: SessionEvent| {
            let payload = match &e {
                SessionEvent::GeneratingStarted { .. } | SessionEvent::FocusRestored => json!({}),
                SessionEvent::Heartbeat { elapsed_ms, .. } => json!({ "elapsed_ms": elapsed_ms }),
                SessionEvent::GeneratingFinished { status, .. } => json!({ "status": status }),
                SessionEvent::Announce(a) => to_value(a),
            };
            emit(
                EventMessage {
                    kind: "event".into(),
                    session: session_id.clone(),
                    event: e.name().into(),
                    request_id: event_id.clone(),
                    payload,
                }
                .to_line(),
            );
        };
        let s = &mut self.session;
        let result: Result<Value, SessionError> = match op {
            Op::Ask => match payload.get("question") {
                Some(Value::String(q)) => s.contextual_qa(q, &mut sink).map(|r| to_value(&r)),
                _ => {
                    emit(
                        Response::err(id, Some(op.as_str()), codes::INVALID_PARAMS, "payload.question must be a string")
                            .to_line(),
                    );
                    return;
                }
            },
            Op::Adaptive => s.adaptive_support(&mut sink).map(|r| to_value(&r)),
            Op::Describe => s.screen_description(&mut sink).map(|r| to_value(&r)),
            Op::StepNext => s.next_step(&mut sink).map(|m| to_value(&m)),
            Op::StepPrev => s.prev_step(&mut sink).map(|m| to_value(&m)),
            Op::ConvPrev => s.conversation_prev(&mut sink).map(|v| to_value(&v)),
            Op::ConvNext => s.conversation_next(&mut sink).map(|v| to_value(&v)),
            Op::Cancel => Ok(json!({ "cancelled": s.cancel() })),
            Op::ClearHistory => s.clear_history().map(|()| json!({})),
            Op::GetHistory => Ok(json!({ "turns": to_value(&s.history()) })),
            Op::GetStatus => Ok(to_value(&s.status())),
            Op::Dismiss => {
                s.dismiss(&mut sink);
                Ok(json!({}))
            }
        };
        let resp = match result {
            Ok(payload) => Response::ok(id, op, payload),
            Err(e) => session_error(id, op, &e),
        };
        emit(resp.to_line());
    }
}
