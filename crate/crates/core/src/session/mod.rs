//! The feature state machine: Contextual Q&A, Adaptive Support and Screen
//! Description, step parsing, step and conversation navigation, and the
//! per-request event contract
//! `generating_started heartbeat* generating_finished announce? focus_restored?`.

mod engine;
mod steps;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{
    ContextError, ContextStore, Feature, NewTurn, StalledStep, Step,
};
use crate::gateway::{
    CancelToken, FinishStatus, GatewayError, ModelRequest, StatusEvent, Usage, UsageLedger,
};
use crate::platform::{PlatformAdapter, Subscription};
use crate::prompt::PromptError;

pub use engine::{Engine, EngineConfig, EngineError, EngineParts, SessionConfig};
pub use steps::{normalized_without_numbers, parse_steps, reconstruct, ParsedSteps};

pub const FIRST_STEP: &str = "first step";
pub const LAST_STEP: &str = "last step";
pub const CANCELLED_TEXT: &str = "Request cancelled.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("a response is already being generated")]
    Busy,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no guidance available")]
    NoGuidanceAvailable,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Busy => "busy",
            SessionError::EmptyQuestion => "empty_question",
            SessionError::NoGuidanceAvailable => "no_guidance_available",
            SessionError::Gateway(GatewayError::Config(_)) => "internal",
            SessionError::Gateway(e) => e.code(),
            SessionError::Prompt(_) | SessionError::Context(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnounceKind {
    /// A full model answer, announced once on arrival.
    Response,
    /// One guidance step after navigation.
    Step,
    /// A conversation-view move.
    Conversation,
    Error,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub kind: AnnounceKind,
    /// Spoken text. For a step move that is not at a bound this is exactly
    /// the step's text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<Step>,
    #[serde(default)]
    pub boundary: bool,
}

impl Announcement {
    fn new(kind: AnnounceKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            turn_id: None,
            step: None,
            boundary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEvent {
    GeneratingStarted { request_id: u64 },
    Heartbeat { request_id: u64, elapsed_ms: u64 },
    GeneratingFinished { request_id: u64, status: FinishStatus },
    Announce(Announcement),
    FocusRestored,
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::GeneratingStarted { .. } => "generating_started",
            SessionEvent::Heartbeat { .. } => "heartbeat",
            SessionEvent::GeneratingFinished { .. } => "generating_finished",
            SessionEvent::Announce(_) => "announce",
            SessionEvent::FocusRestored => "focus_restored",
        }
    }
}

/// A parsed model answer stored as a chat turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceResponse {
    pub turn_id: u64,
    pub feature: Feature,
    pub preamble: Option<String>,
    pub steps: Vec<Step>,
    pub raw_text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMove {
    pub turn_id: u64,
    pub step: Step,
    pub step_count: usize,
    /// The move hit a bound and the cursor did not change.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_id: u64,
    pub feature: Feature,
    pub question: String,
    pub answer: String,
    pub steps: Vec<Step>,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationView {
    /// 1-based position in the history.
    pub index: usize,
    pub count: usize,
    pub boundary: bool,
    pub turn: TurnView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Generating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorView {
    pub turn_id: u64,
    pub step_index: usize,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session: String,
    pub phase: Phase,
    pub current: Option<CursorView>,
    /// `(index, count)` of the conversation view, 1-based.
    pub conversation: Option<(usize, usize)>,
    pub history_len: usize,
    pub stalled_step: Option<StalledStep>,
    pub kb_loaded: bool,
    pub provider_id: String,
}

/// Thread-safe handle for status reads and cancellation while the session
/// itself is busy on another thread.
#[derive(Debug, Clone)]
pub struct SessionControl {
    status: Arc<Mutex<SessionStatus>>,
    armed: Arc<Mutex<Option<CancelToken>>>,
}

impl SessionControl {
    pub fn status(&self) -> SessionStatus {
        self.status.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Prepares the cancel token for the next generation. Callers that
    /// queue work for another thread arm first so an early cancel is kept.
    pub fn arm(&self) {
        *self.armed.lock().unwrap_or_else(|p| p.into_inner()) = Some(CancelToken::new());
    }

    /// Cancels the armed or in-flight generation. Returns false when there
    /// was nothing to cancel.
    pub fn cancel(&self) -> bool {
        match &*self.armed.lock().unwrap_or_else(|p| p.into_inner()) {
            Some(t) => {
                t.cancel();
                true
            }
            None => false,
        }
    }

    fn take_or_arm(&self) -> CancelToken {
        self.armed
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get_or_insert_with(CancelToken::new)
            .clone()
    }

    /// Drops the armed token without cancelling it. For callers that
    /// armed ahead of a request that ended before generating.
    pub fn disarm(&self) {
        *self.armed.lock().unwrap_or_else(|p| p.into_inner()) = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cursor {
    turn_id: u64,
    step_index: usize,
}

/// One user's session. Owned by a single control thread.
pub struct Session {
    id: String,
    engine: Arc<Engine>,
    adapter: Arc<dyn PlatformAdapter>,
    store: ContextStore,
    ledger: UsageLedger,
    current: Option<Cursor>,
    conversation: Option<usize>,
    phase: Phase,
    next_request_id: u64,
    control: SessionControl,
    _trace: Option<Subscription>,
    trace_error: Option<String>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("phase", &self.phase)
            .field("current", &self.current)
            .field("store", &self.store)
            .finish()
    }
}

type Sink<'a> = &'a mut dyn FnMut(SessionEvent);

impl Session {
    pub fn new(engine: Arc<Engine>, adapter: Arc<dyn PlatformAdapter>, id: impl Into<String>) -> Self {
        let id = id.into();
        let store = ContextStore::new(engine.config().context, Arc::clone(engine.tokenizer()));
        let buffer = store.trace_buffer();
        let (trace, trace_error) = match adapter.subscribe_trace(Arc::new(move |e| {
            buffer.append(e);
        })) {
            Ok(sub) => (Some(sub), None),
            // adapters without trace support are expected to refuse
            Err(e) if adapter.capabilities().can_trace => (None, Some(e.to_string())),
            Err(_) => (None, None),
        };
        let status = SessionStatus {
            session: id.clone(),
            phase: Phase::Idle,
            current: None,
            conversation: None,
            history_len: 0,
            stalled_step: None,
            kb_loaded: engine.kb().is_some(),
            provider_id: engine.gateway().provider().provider_id().to_owned(),
        };
        Self {
            ledger: UsageLedger::new(engine.config().gateway.price_table),
            id,
            engine,
            adapter,
            store,
            current: None,
            conversation: None,
            phase: Phase::Idle,
            next_request_id: 1,
            control: SessionControl {
                status: Arc::new(Mutex::new(status)),
                armed: Arc::new(Mutex::new(None)),
            },
            _trace: trace,
            trace_error,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Why the screen-reader trace could not be subscribed, when the
    /// adapter claims trace support.
    pub fn trace_error(&self) -> Option<&str> {
        self.trace_error.as_deref()
    }

    pub fn control(&self) -> SessionControl {
        self.control.clone()
    }

    pub fn store(&self) -> &ContextStore {
        &self.store
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn adapter(&self) -> &Arc<dyn PlatformAdapter> {
        &self.adapter
    }

    pub fn status(&self) -> SessionStatus {
        self.control.status()
    }

    fn publish(&self) {
        let history = self.store.all_history();
        let current = self.current.and_then(|c| {
            self.store.turn(c.turn_id).map(|t| CursorView {
                turn_id: c.turn_id,
                step_index: c.step_index,
                step_count: t.steps.len(),
            })
        });
        let mut s = self.control.status.lock().unwrap_or_else(|p| p.into_inner());
        s.phase = self.phase;
        s.current = current;
        s.conversation = self.conversation.map(|i| (i + 1, history.len()));
        s.history_len = history.len();
        s.stalled_step = self.store.get_stalled_step();
    }

    pub fn contextual_qa(&mut self, question: &str, sink: Sink) -> Result<GuidanceResponse, SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        let question = question.trim();
        if question.is_empty() {
            return Err(SessionError::EmptyQuestion);
        }
        self.generate(Feature::ContextualQa, Some(question), sink)
    }

    pub fn adaptive_support(&mut self, sink: Sink) -> Result<GuidanceResponse, SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        self.generate(Feature::AdaptiveSupport, None, sink)
    }

    pub fn screen_description(&mut self, sink: Sink) -> Result<GuidanceResponse, SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        self.generate(Feature::ScreenDescription, None, sink)
    }

    fn retrieved_docs(&self, question: &str) -> Option<String> {
        let cfg = self.engine.config().session;
        let hits = self.engine.search(question, cfg.k, cfg.use_hyde).ok()?;
        let kb = self.engine.kb()?;
        (!hits.is_empty()).then(|| kb.format_hits(&hits))
    }

    fn generate(
        &mut self,
        feature: Feature,
        question: Option<&str>,
        sink: Sink,
    ) -> Result<GuidanceResponse, SessionError> {
        let cancel = self.control.take_or_arm();
        self.phase = Phase::Generating;
        self.publish();
        let result = self.run_pipeline(feature, question, &cancel, sink);
        self.phase = Phase::Idle;
        self.control.disarm();
        match &result {
            Ok(resp) => {
                let mut a = Announcement::new(AnnounceKind::Response, resp.raw_text.trim());
                a.turn_id = Some(resp.turn_id);
                sink(SessionEvent::Announce(a));
                if self.engine.config().session.auto_hide {
                    sink(SessionEvent::FocusRestored);
                }
            }
            Err(SessionError::Gateway(e)) => {
                let (kind, text) = match e {
                    GatewayError::Cancelled => (AnnounceKind::Cancelled, CANCELLED_TEXT.to_owned()),
                    GatewayError::Timeout => (
                        AnnounceKind::Error,
                        "The assistant did not respond in time. Try again when ready.".to_owned(),
                    ),
                    other => (AnnounceKind::Error, format!("The assistant could not answer. {other}.")),
                };
                sink(SessionEvent::Announce(Announcement::new(kind, text)));
            }
            Err(_) => {}
        }
        self.publish();
        result
    }

    fn run_pipeline(
        &mut self,
        feature: Feature,
        question: Option<&str>,
        cancel: &CancelToken,
        sink: Sink,
    ) -> Result<GuidanceResponse, SessionError> {
        // a failed capture leaves missing-block markers; the request goes on
        let _ = self.store.capture_environment(self.adapter.as_ref());
        let docs = match (feature, question) {
            (Feature::ContextualQa, Some(q)) => self.retrieved_docs(q),
            _ => None,
        };
        let bundle = self.store.build_bundle(feature, question, docs.as_deref())?;
        let prompt = self.engine.assembler().render(feature, &bundle, question)?;
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let request = ModelRequest {
            request_id,
            prompt,
            max_output_tokens: self.engine.config().gateway.max_output_tokens,
        };
        let response = self.engine.gateway().complete(
            request,
            &mut |e| {
                sink(match e {
                    StatusEvent::GeneratingStarted { request_id } => SessionEvent::GeneratingStarted { request_id },
                    StatusEvent::Heartbeat { request_id, elapsed_ms } => {
                        SessionEvent::Heartbeat { request_id, elapsed_ms }
                    }
                    StatusEvent::GeneratingFinished { request_id, status } => {
                        SessionEvent::GeneratingFinished { request_id, status }
                    }
                })
            },
            cancel,
        )?;
        let record = self.ledger.record_usage(feature, &response);
        let parsed = parse_steps(&response.text);
        let turn_id = self.store.push_chat_turn(NewTurn {
            feature,
            question: question.unwrap_or_default().to_owned(),
            answer: response.text.clone(),
            steps: parsed.steps.clone(),
        });
        self.conversation = Some(self.store.all_history().len() - 1);
        if feature != Feature::ScreenDescription && !parsed.steps.is_empty() {
            self.current = Some(Cursor { turn_id, step_index: 1 });
            self.store.set_stalled_step(turn_id, 1)?;
        }
        Ok(GuidanceResponse {
            turn_id,
            feature,
            preamble: parsed.preamble,
            steps: parsed.steps,
            raw_text: response.text,
            usage: record.usage,
            latency_ms: record.latency_ms,
            cost: record.cost,
        })
    }

    pub fn next_step(&mut self, sink: Sink) -> Result<StepMove, SessionError> {
        self.move_step(1, sink)
    }

    pub fn prev_step(&mut self, sink: Sink) -> Result<StepMove, SessionError> {
        self.move_step(-1, sink)
    }

    fn move_step(&mut self, delta: i64, sink: Sink) -> Result<StepMove, SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        let cur = self.current.ok_or(SessionError::NoGuidanceAvailable)?;
        let turn = self.store.turn(cur.turn_id).ok_or(SessionError::NoGuidanceAvailable)?;
        let count = turn.steps.len();
        if count == 0 {
            return Err(SessionError::NoGuidanceAvailable);
        }
        let target = cur.step_index as i64 + delta;
        let boundary = target < 1 || target > count as i64;
        let index = target.clamp(1, count as i64) as usize;
        let step = turn.steps[index - 1].clone();
        self.current = Some(Cursor { turn_id: cur.turn_id, step_index: index });
        self.store.set_stalled_step(cur.turn_id, index)?;
        let text = match (boundary, delta < 0) {
            (false, _) => step.text.clone(),
            (true, true) => FIRST_STEP.to_owned(),
            (true, false) => LAST_STEP.to_owned(),
        };
        sink(SessionEvent::Announce(Announcement {
            kind: AnnounceKind::Step,
            text,
            turn_id: Some(cur.turn_id),
            step: Some(step.clone()),
            boundary,
        }));
        self.publish();
        Ok(StepMove {
            turn_id: cur.turn_id,
            step,
            step_count: count,
            boundary,
        })
    }

    pub fn conversation_prev(&mut self, sink: Sink) -> Result<ConversationView, SessionError> {
        self.move_conversation(-1, sink)
    }

    pub fn conversation_next(&mut self, sink: Sink) -> Result<ConversationView, SessionError> {
        self.move_conversation(1, sink)
    }

    fn move_conversation(&mut self, delta: i64, sink: Sink) -> Result<ConversationView, SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        let count = self.store.all_history().len();
        let cur = self.conversation.ok_or(SessionError::NoGuidanceAvailable)?;
        if count == 0 {
            return Err(SessionError::NoGuidanceAvailable);
        }
        let target = cur as i64 + delta;
        let boundary = target < 0 || target >= count as i64;
        let index = target.clamp(0, count as i64 - 1) as usize;
        self.conversation = Some(index);
        let turn = turn_view(&self.store.all_history()[index]);
        let text = if boundary {
            format!(
                "{}. Conversation {} of {count}",
                if delta < 0 { "First conversation" } else { "Last conversation" },
                index + 1
            )
        } else {
            format!("Conversation {} of {count}", index + 1)
        };
        sink(SessionEvent::Announce(Announcement {
            kind: AnnounceKind::Conversation,
            text,
            turn_id: Some(turn.turn_id),
            step: None,
            boundary,
        }));
        self.publish();
        Ok(ConversationView {
            index: index + 1,
            count,
            boundary,
            turn,
        })
    }

    /// Hides the dialog and hands focus back to where it was.
    pub fn dismiss(&mut self, sink: Sink) {
        sink(SessionEvent::FocusRestored);
    }

    /// Cancels an in-flight generation. A no-op when idle.
    pub fn cancel(&self) -> bool {
        self.control.cancel()
    }

    pub fn clear_history(&mut self) -> Result<(), SessionError> {
        if self.phase == Phase::Generating {
            return Err(SessionError::Busy);
        }
        self.store.clear_history();
        self.current = None;
        self.conversation = None;
        self.publish();
        Ok(())
    }

    pub fn history(&self) -> Vec<TurnView> {
        self.store.all_history().iter().map(turn_view).collect()
    }
}

fn turn_view(t: &crate::context::ChatTurn) -> TurnView {
    TurnView {
        turn_id: t.turn_id,
        feature: t.feature,
        question: t.question.clone(),
        answer: t.answer.clone(),
        steps: t.steps.clone(),
        at: t.at,
    }
}

/// Checks one request's events against
/// `generating_started heartbeat* generating_finished announce? focus_restored?`.
pub fn check_event_order(events: &[&str]) -> Result<(), String> {
    let mut it = events.iter().peekable();
    if it.next() != Some(&"generating_started") {
        return Err(format!("stream must open with generating_started: {events:?}"));
    }
    while it.peek() == Some(&&"heartbeat") {
        it.next();
    }
    if it.next() != Some(&"generating_finished") {
        return Err(format!("generating_finished missing or misplaced: {events:?}"));
    }
    if it.peek() == Some(&&"announce") {
        it.next();
    }
    if it.peek() == Some(&&"focus_restored") {
        it.next();
    }
    match it.next() {
        None => Ok(()),
        Some(extra) => Err(format!("unexpected {extra} after end of stream: {events:?}")),
    }
}
