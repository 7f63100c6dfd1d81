//! Environment and conversational context: capture, retention, truncation,
//! and per-feature bundle assembly.

mod bundle;
mod store;
mod trace;
mod truncate;
mod types;

pub use bundle::{block_tags, Block, BlockContent, BlockTag, ContextBundle, NOT_AVAILABLE};
pub use store::{
    capture_environment, BlockBudgets, ContextConfig, ContextError, ContextStore, Environment,
    NewTurn, NO_STALLED_STEP,
};
pub use trace::{TraceBuffer, DEFAULT_TRACE_CAPACITY};
pub use truncate::{marker_tokens, truncate_block, TruncatePolicy, Truncated, TRUNCATION_MARKER};
pub use types::{
    ChatTurn, EnvSnapshot, Feature, FocusElement, Rect, ScreenState, Screenshot, StalledStep,
    Step, TraceEvent, TraceKind,
};

pub(crate) use types::now_ms;
