use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EvalError, RunReport, TaskScenario};
use crate::context::Feature;
use crate::gateway::{HashingEmbedder, MockProvider, Usage};
use crate::kb::{parse_markdown, IndexOptions, KnowledgeBase};
use crate::platform::SimulatedDesktop;
use crate::prompt::PromptLibrary;
use crate::protocol::{Connection, EventMessage, Incoming, Response};
use crate::session::{check_event_order, Engine, EngineConfig, EngineParts, GuidanceResponse, Session};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Replaces every scenario's `max_adaptive_rounds` when set.
    pub max_adaptive_rounds: Option<u32>,
    /// Scenarios run concurrently on this many threads.
    pub parallel: usize,
    /// Store measured wall time per call. Off by default so reports are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_adaptive_rounds: None,
            parallel: 1,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub feature: Feature,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<String>,
    pub usage: Usage,
    /// Provider-reported latency; scripted under the mock.
    pub latency_ms: u64,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub name: String,
    pub app: String,
    pub success: bool,
    /// Succeeded without any adaptive round.
    pub first_try_success: bool,
    pub qa_rounds: u32,
    pub adaptive_rounds: u32,
    pub max_adaptive_rounds: u32,
    pub final_frame: usize,
    pub calls: Vec<CallRecord>,
    pub total_cost: f64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    /// Generation requests whose event streams were checked.
    pub requests_checked: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub event_violations: Vec<String>,
}

/// Drives one connection with protocol lines, as an external client would.
struct Driver {
    conn: Connection,
    next_id: u64,
    requests_checked: usize,
    violations: Vec<String>,
}

impl Driver {
    fn call(&mut self, op: &str, payload: Value) -> Result<(Response, Vec<EventMessage>), EvalError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = json!({"kind": "request", "id": id, "op": op, "payload": payload}).to_string();
        let mut response = None;
        let mut events = Vec::new();
        for out in self.conn.handle_line(&line) {
            match Incoming::parse(&out).map_err(EvalError::Protocol)? {
                Incoming::Response(r) => response = Some(r),
                Incoming::Event(e) => events.push(e),
            }
        }
        let response = response.ok_or_else(|| EvalError::Protocol(format!("no response to {op}")))?;
        if response.id != json!(id) {
            return Err(EvalError::Protocol(format!("response id {} for request {id}", response.id)));
        }
        Ok((response, events))
    }

    fn generate(&mut self, op: &str, payload: Value, record_wall: bool) -> Result<(CallRecord, Option<String>), EvalError> {
        let feature = match op {
            "ask" => Feature::ContextualQa,
            "adaptive" => Feature::AdaptiveSupport,
            _ => Feature::ScreenDescription,
        };
        let started = Instant::now();
        let (resp, events) = self.call(op, payload)?;
        let wall_ms = record_wall.then(|| started.elapsed().as_millis() as u64);
        let names: Vec<&str> = events.iter().map(|e| e.event.as_str()).collect();
        self.requests_checked += 1;
        if let Err(v) = check_event_order(&names) {
            self.violations.push(format!("{op}: {v}"));
        }
        if resp.ok {
            let g: GuidanceResponse = serde_json::from_value(resp.payload.unwrap_or(Value::Null))
                .map_err(|e| EvalError::Protocol(format!("{op} payload: {e}")))?;
            Ok((
                CallRecord {
                    feature,
                    ok: true,
                    error_code: None,
                    usage: g.usage,
                    latency_ms: g.latency_ms,
                    cost: g.cost,
                    wall_ms,
                },
                Some(g.raw_text),
            ))
        } else {
            Ok((
                CallRecord {
                    feature,
                    ok: false,
                    error_code: resp.error.map(|e| e.code),
                    usage: Usage::default(),
                    latency_ms: 0,
                    cost: 0.0,
                    wall_ms,
                },
                None,
            ))
        }
    }

    /// Moves the step cursor forward from step 1 to `step`.
    fn navigate(&mut self, step: usize) -> Result<(), EvalError> {
        for _ in 1..step {
            let (resp, events) = self.call("step_next", json!({}))?;
            if !resp.ok {
                break;
            }
            if events.iter().any(|e| e.event != "announce") || events.len() != 1 {
                self.violations.push(format!("step_next emitted {:?}", events.iter().map(|e| &e.event).collect::<Vec<_>>()));
            }
        }
        Ok(())
    }
}

fn build_engine(s: &TaskScenario) -> Result<Arc<Engine>, EvalError> {
    let provider = Arc::new(MockProvider::new(s.model.clone()));
    let embedder = Arc::new(HashingEmbedder::default());
    let prompts = PromptLibrary::builtin();
    let kb = if s.docs.is_empty() {
        None
    } else {
        let docs = s
            .docs
            .iter()
            .map(|d| parse_markdown(d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EvalError::Scenario(format!("{}: {e}", s.name)))?;
        let (kb, _warnings) = KnowledgeBase::build(&docs, &IndexOptions::default(), provider.as_ref(), embedder.as_ref(), &prompts)
            .map_err(|e| EvalError::Scenario(format!("{}: {e}", s.name)))?;
        Some(kb)
    };
    let mut config = EngineConfig {
        session: s.session,
        ..EngineConfig::default()
    };
    config.gateway.price_table = s.price_table;
    Ok(Arc::new(Engine::from_parts(EngineParts {
        config,
        completion: provider,
        embedder,
        kb,
        prompts,
        desktop: None,
    })))
}

/// Replays one scenario: the task description as a question, any
/// follow-up questions, then adaptive rounds until the success predicate
/// holds or the round limit is reached.
pub fn run_scenario(s: &TaskScenario, options: &RunOptions) -> Result<TaskRecord, EvalError> {
    s.validate()?;
    let max_rounds = options.max_adaptive_rounds.unwrap_or(s.max_adaptive_rounds);
    let engine = build_engine(s)?;
    let desktop = Arc::new(SimulatedDesktop::new(s.desktop.clone()).map_err(EvalError::Scenario)?);
    let session = Session::new(engine, desktop.clone(), s.name.clone());
    let mut d = Driver {
        conn: Connection::new(session),
        next_id: 1,
        requests_checked: 0,
        violations: Vec::new(),
    };
    let mut calls = Vec::new();
    let mut last_guidance: Option<String> = None;
    let mut turn = 0usize;
    let follow = |d: &mut Driver, turn: &mut usize, answered: bool| -> Result<(), EvalError> {
        let f = s.followthrough.get(*turn).cloned().unwrap_or_default();
        *turn += 1;
        if let (true, Some(step)) = (answered, f.navigate_to_step) {
            d.navigate(step)?;
        }
        if let Some(frame) = f.advance_to_frame {
            desktop.advance_to(frame);
        }
        Ok(())
    };

    let questions = std::iter::once(&s.task_description).chain(&s.follow_up_questions);
    let mut qa_rounds = 0;
    for q in questions {
        let (call, text) = d.generate("ask", json!({ "question": q }), options.record_wall_time)?;
        qa_rounds += 1;
        calls.push(call);
        let answered = text.is_some();
        if text.is_some() {
            last_guidance = text;
        }
        follow(&mut d, &mut turn, answered)?;
    }
    let mut success = s.success.evaluate(desktop.current_frame(), last_guidance.as_deref())?;
    let first_try_success = success;
    let mut adaptive_rounds = 0;
    while !success && adaptive_rounds < max_rounds {
        let (call, text) = d.generate("adaptive", json!({}), options.record_wall_time)?;
        adaptive_rounds += 1;
        calls.push(call);
        let answered = text.is_some();
        if text.is_some() {
            last_guidance = text;
        }
        follow(&mut d, &mut turn, answered)?;
        success = s.success.evaluate(desktop.current_frame(), last_guidance.as_deref())?;
    }

    // cross-check the protocol view against the session's own ledger
    let ledger = &d.conn.session().ledger().records;
    let ok_calls: Vec<&CallRecord> = calls.iter().filter(|c| c.ok).collect();
    let consistent = ledger.len() == ok_calls.len()
        && ledger
            .iter()
            .zip(&ok_calls)
            .all(|(l, c)| l.feature == c.feature && l.usage == c.usage && l.cost == c.cost);
    if !consistent {
        return Err(EvalError::Protocol(format!("{}: call records disagree with the usage ledger", s.name)));
    }

    let total_cost = crate::gateway::round_cost(calls.iter().map(|c| c.cost).sum());
    Ok(TaskRecord {
        name: s.name.clone(),
        app: s.app.clone(),
        success,
        first_try_success,
        qa_rounds,
        adaptive_rounds,
        max_adaptive_rounds: max_rounds,
        final_frame: desktop.cursor(),
        total_input_tokens: calls.iter().map(|c| c.usage.input_tokens).sum(),
        total_output_tokens: calls.iter().map(|c| c.usage.output_tokens).sum(),
        total_cost,
        calls,
        requests_checked: d.requests_checked,
        event_violations: d.violations,
    })
}

/// Runs every scenario and aggregates. Task order in the report follows
/// the input order regardless of `parallel`.
pub fn run_suite(scenarios: &[TaskScenario], options: &RunOptions) -> Result<RunReport, EvalError> {
    if scenarios.is_empty() {
        return Err(EvalError::Scenario("suite has no scenarios".into()));
    }
    let workers = options.parallel.clamp(1, scenarios.len());
    let slots: Vec<Mutex<Option<Result<TaskRecord, EvalError>>>> = scenarios.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(s) = scenarios.get(i) else { break };
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(run_scenario(s, options));
            });
        }
    });
    let tasks = slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .unwrap_or_else(|| Err(EvalError::Scenario("scenario did not run".into())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport::from_tasks(tasks))
}
