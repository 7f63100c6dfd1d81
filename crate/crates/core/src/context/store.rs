use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bundle::{block_tags, Block, BlockContent, BlockTag, ContextBundle};
use super::trace::{TraceBuffer, DEFAULT_TRACE_CAPACITY};
use super::truncate::{truncate_block, TruncatePolicy};
use super::types::{
    now_ms, ChatTurn, EnvSnapshot, Feature, ScreenState, Screenshot, StalledStep, Step,
};
use crate::gateway::Tokenizer;
use crate::platform::{highlight_focus, AdapterError, PlatformAdapter, BORDER_WIDTH};

/// Stalled-step block text when no step has been reached yet.
pub const NO_STALLED_STEP: &str = "none recorded";
const NO_HISTORY: &str = "No previous conversation.";
const NO_TRACE: &str = "No screen reader events recorded.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("missing required input: {0}")]
    MissingRequiredInput(&'static str),
    #[error("unknown turn {0}")]
    UnknownTurn(u64),
    #[error("step {step} out of range for turn {turn_id} ({len} steps)")]
    StepOutOfRange {
        turn_id: u64,
        step: usize,
        len: usize,
    },
}

/// Token budgets per text block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockBudgets {
    pub screen_state: usize,
    pub sr_trace: usize,
    pub retrieved_docs: usize,
    pub chat_history: usize,
    pub stalled_step: usize,
    pub question: usize,
}

impl Default for BlockBudgets {
    fn default() -> Self {
        Self {
            screen_state: 512,
            sr_trace: 1024,
            retrieved_docs: 2048,
            chat_history: 2048,
            stalled_step: 256,
            question: 512,
        }
    }
}

impl BlockBudgets {
    pub fn for_tag(&self, tag: BlockTag) -> usize {
        match tag {
            BlockTag::Screenshot => 0,
            BlockTag::ScreenState => self.screen_state,
            BlockTag::SrTrace => self.sr_trace,
            BlockTag::RetrievedDocs => self.retrieved_docs,
            BlockTag::ChatHistory => self.chat_history,
            BlockTag::StalledStep => self.stalled_step,
        }
    }

    pub fn policy(tag: BlockTag) -> TruncatePolicy {
        match tag {
            BlockTag::SrTrace | BlockTag::ChatHistory => TruncatePolicy::KeepTail,
            _ => TruncatePolicy::KeepHead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub trace_capacity: usize,
    /// Number of most recent trace events serialized into prompts.
    pub trace_window: usize,
    pub budgets: BlockBudgets,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            trace_capacity: DEFAULT_TRACE_CAPACITY,
            trace_window: 50,
            budgets: BlockBudgets::default(),
        }
    }
}

/// What one capture produced. Either part may be absent when the adapter
/// lacks the capability or failed.
#[derive(Debug, Clone, Default)]
pub struct Environment {
    pub screen_state: Option<ScreenState>,
    pub screenshot: Option<Arc<Screenshot>>,
}

/// Reads screen state and screenshot from `adapter` and draws the focus
/// border at the focused element's bounds.
pub fn capture_environment(adapter: &dyn PlatformAdapter) -> Result<Environment, AdapterError> {
    let caps = adapter.capabilities();
    let shot = if caps.can_screenshot {
        match adapter.get_screenshot() {
            Ok(s) => Some(s),
            Err(AdapterError::CapabilityMissing(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mut state = adapter.get_screen_state()?;
    let screenshot = shot.map(|s| {
        let mut s = if caps.can_focus_bounds {
            highlight_focus(&s, state.focus.bounds, BORDER_WIDTH)
        } else {
            s
        };
        // one capture instant for both halves
        s.captured_at = state.captured_at;
        Arc::new(s)
    });
    if state.captured_at == 0 {
        state.captured_at = now_ms();
    }
    Ok(Environment {
        screen_state: Some(state),
        screenshot,
    })
}

/// A turn to append; the store assigns `turn_id` and timestamp.
#[derive(Debug, Clone)]
pub struct NewTurn {
    pub feature: Feature,
    pub question: String,
    pub answer: String,
    pub steps: Vec<Step>,
}

/// Per-session context. Owned by the session's control thread; the trace
/// buffer is shared with the capture thread.
pub struct ContextStore {
    config: ContextConfig,
    tokenizer: Arc<dyn Tokenizer>,
    trace: Arc<TraceBuffer>,
    history: Vec<ChatTurn>,
    next_turn_id: u64,
    stalled: Option<StalledStep>,
    env: Environment,
}

impl std::fmt::Debug for ContextStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContextStore")
            .field("config", &self.config)
            .field("trace_len", &self.trace.len())
            .field("history_len", &self.history.len())
            .field("stalled", &self.stalled)
            .finish()
    }
}

impl ContextStore {
    pub fn new(config: ContextConfig, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            trace: Arc::new(TraceBuffer::new(config.trace_capacity)),
            config,
            tokenizer,
            history: Vec::new(),
            next_turn_id: 1,
            stalled: None,
            env: Environment::default(),
        }
    }

    pub fn config(&self) -> &ContextConfig {
        &self.config
    }

    /// Shared handle for the capture thread.
    pub fn trace_buffer(&self) -> Arc<TraceBuffer> {
        Arc::clone(&self.trace)
    }

    pub fn append_trace_event(&self, event: super::TraceEvent) -> bool {
        self.trace.append(event)
    }

    pub fn recent_trace(&self, n: usize) -> Vec<super::TraceEvent> {
        self.trace.recent(n)
    }

    /// Captures into the store. On failure the environment is cleared so
    /// the next bundle carries missing-block markers, and the error is
    /// returned for reporting.
    pub fn capture_environment(&mut self, adapter: &dyn PlatformAdapter) -> Result<(), AdapterError> {
        match capture_environment(adapter) {
            Ok(env) => {
                self.env = env;
                Ok(())
            }
            Err(e) => {
                self.env = Environment::default();
                Err(e)
            }
        }
    }

    pub fn set_environment(&mut self, env: Environment) {
        self.env = env;
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn push_chat_turn(&mut self, turn: NewTurn) -> u64 {
        let turn_id = self.next_turn_id;
        self.next_turn_id += 1;
        self.history.push(ChatTurn {
            turn_id,
            question: turn.question,
            answer: turn.answer,
            steps: turn.steps,
            feature: turn.feature,
            env_snapshot: EnvSnapshot {
                screen_state: self.env.screen_state.clone(),
                screenshot: self.env.screenshot.clone(),
            },
            at: now_ms(),
        });
        turn_id
    }

    /// Empties history, forgets the stalled step, and restarts turn ids at 1.
    pub fn clear_history(&mut self) {
        self.history.clear();
        self.stalled = None;
        self.next_turn_id = 1;
    }

    /// The last `n` turns, oldest first.
    pub fn history(&self, n: usize) -> &[ChatTurn] {
        &self.history[self.history.len().saturating_sub(n)..]
    }

    pub fn all_history(&self) -> &[ChatTurn] {
        &self.history
    }

    pub fn turn(&self, turn_id: u64) -> Option<&ChatTurn> {
        self.history.iter().find(|t| t.turn_id == turn_id)
    }

    pub fn set_stalled_step(&mut self, turn_id: u64, step_index: usize) -> Result<(), ContextError> {
        let turn = self
            .turn(turn_id)
            .ok_or(ContextError::UnknownTurn(turn_id))?;
        if step_index == 0 || step_index > turn.steps.len() {
            return Err(ContextError::StepOutOfRange {
                turn_id,
                step: step_index,
                len: turn.steps.len(),
            });
        }
        self.stalled = Some(StalledStep {
            turn_id,
            step_index,
        });
        Ok(())
    }

    pub fn get_stalled_step(&self) -> Option<StalledStep> {
        self.stalled
    }

    /// Text-only history serialization (no screenshots).
    pub fn chat_history_text(&self) -> String {
        if self.history.is_empty() {
            return NO_HISTORY.to_owned();
        }
        let mut out = String::new();
        for (i, t) in self.history.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "[Turn {}] {}", t.turn_id, t.feature.label());
            if !t.question.is_empty() {
                let _ = writeln!(out, "User: {}", t.question);
            }
            let _ = write!(out, "Assistant: {}", t.answer.trim());
        }
        out
    }

    pub fn trace_text(&self) -> String {
        let events = self.trace.recent(self.config.trace_window);
        if events.is_empty() {
            return NO_TRACE.to_owned();
        }
        events.iter().map(|e| e.to_line()).collect::<Vec<_>>().join("\n")
    }

    pub fn stalled_step_text(&self) -> String {
        let Some(s) = self.stalled else {
            return NO_STALLED_STEP.to_owned();
        };
        match self.turn(s.turn_id).and_then(|t| t.steps.get(s.step_index - 1).map(|st| (t, st))) {
            Some((turn, step)) => format!(
                "Turn {}, step {} of {}: {}",
                s.turn_id,
                s.step_index,
                turn.steps.len(),
                step.text
            ),
            None => NO_STALLED_STEP.to_owned(),
        }
    }

    /// Assembles the feature's fixed block set from the current store
    /// state. `kb_hits` is the formatted retrieval block, if any.
    pub fn build_bundle(
        &self,
        feature: Feature,
        question: Option<&str>,
        kb_hits: Option<&str>,
    ) -> Result<ContextBundle, ContextError> {
        if feature == Feature::ContextualQa && question.is_none() {
            return Err(ContextError::MissingRequiredInput("question"));
        }
        let blocks = block_tags(feature)
            .iter()
            .map(|&tag| self.block(tag, kb_hits))
            .collect();
        Ok(ContextBundle { feature, blocks })
    }

    fn block(&self, tag: BlockTag, kb_hits: Option<&str>) -> Block {
        let raw = match tag {
            BlockTag::Screenshot => {
                return Block {
                    tag,
                    content: match &self.env.screenshot {
                        Some(s) => BlockContent::Image(Arc::clone(s)),
                        None => BlockContent::Missing,
                    },
                    truncated: false,
                };
            }
            BlockTag::ScreenState => self.env.screen_state.as_ref().map(|s| s.to_text()),
            BlockTag::SrTrace => Some(self.trace_text()),
            BlockTag::RetrievedDocs => kb_hits.map(str::to_owned),
            BlockTag::ChatHistory => Some(self.chat_history_text()),
            BlockTag::StalledStep => Some(self.stalled_step_text()),
        };
        match raw {
            None => Block {
                tag,
                content: BlockContent::Missing,
                truncated: false,
            },
            Some(text) => {
                let t = truncate_block(
                    &text,
                    self.config.budgets.for_tag(tag),
                    BlockBudgets::policy(tag),
                    self.tokenizer.as_ref(),
                );
                Block {
                    tag,
                    content: BlockContent::Text(t.text),
                    truncated: t.truncated,
                }
            }
        }
    }
}
