//! Boundary to the desktop and screen reader.
//!
//! Real screen-reader hooks live in the client process; the engine talks to
//! them through [`PlatformAdapter`]. [`SimulatedDesktop`] is a scriptable
//! stand-in used by tests, the evaluation harness, and the stdio server.

mod highlight;
mod sim;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ScreenState, Screenshot, TraceEvent};

pub use highlight::{highlight_focus, on_frame, BORDER_RGB, BORDER_WIDTH};
pub use sim::{DesktopFrame, RasterSpec, SimulatedDesktop, SimulatedDesktopScript, SpecRect};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("platform adapter unavailable")]
    Unavailable,
    #[error("adapter capability missing: {0}")]
    CapabilityMissing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCapabilities {
    pub can_screenshot: bool,
    pub can_focus_bounds: bool,
    pub can_trace: bool,
}

impl Default for AdapterCapabilities {
    fn default() -> Self {
        Self {
            can_screenshot: true,
            can_focus_bounds: true,
            can_trace: true,
        }
    }
}

pub type TraceSink = Arc<dyn Fn(TraceEvent) + Send + Sync>;

/// Handle returned by [`PlatformAdapter::subscribe_trace`]. Delivery stops
/// when it is dropped or [`Subscription::unsubscribe`] is called.
pub struct Subscription {
    cancel: Option<Box<dyn FnOnce() + Send>>,
}

impl Subscription {
    pub fn new(cancel: impl FnOnce() + Send + 'static) -> Self {
        Self {
            cancel: Some(Box::new(cancel)),
        }
    }

    /// A subscription with nothing to cancel.
    pub fn inert() -> Self {
        Self { cancel: None }
    }

    pub fn unsubscribe(mut self) {
        if let Some(f) = self.cancel.take() {
            f();
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(f) = self.cancel.take() {
            f();
        }
    }
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("active", &self.cancel.is_some())
            .finish()
    }
}

pub trait PlatformAdapter: Send + Sync {
    fn capabilities(&self) -> AdapterCapabilities;

    fn get_screen_state(&self) -> Result<ScreenState, AdapterError>;

    /// Raw screenshot; the focus highlight is applied by the caller.
    fn get_screenshot(&self) -> Result<Screenshot, AdapterError>;

    fn subscribe_trace(&self, sink: TraceSink) -> Result<Subscription, AdapterError>;
}

/// Adapter for when no desktop is attached. Every capture fails with
/// [`AdapterError::Unavailable`].
#[derive(Debug, Default, Clone, Copy)]
pub struct NullAdapter;

impl PlatformAdapter for NullAdapter {
    fn capabilities(&self) -> AdapterCapabilities {
        AdapterCapabilities {
            can_screenshot: false,
            can_focus_bounds: false,
            can_trace: false,
        }
    }

    fn get_screen_state(&self) -> Result<ScreenState, AdapterError> {
        Err(AdapterError::Unavailable)
    }

    fn get_screenshot(&self) -> Result<Screenshot, AdapterError> {
        Err(AdapterError::Unavailable)
    }

    fn subscribe_trace(&self, _sink: TraceSink) -> Result<Subscription, AdapterError> {
        Err(AdapterError::CapabilityMissing("trace"))
    }
}
