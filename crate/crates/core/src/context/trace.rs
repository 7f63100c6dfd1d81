use std::collections::VecDeque;
use std::sync::Mutex;

use super::types::TraceEvent;

pub const DEFAULT_TRACE_CAPACITY: usize = 500;

/// Bounded chronological log of screen-reader events.
///
/// Appends come from the capture thread while the control thread reads
/// snapshots, so all access goes through one lock; readers always observe a
/// whole, ordered sequence.
#[derive(Debug)]
pub struct TraceBuffer {
    capacity: usize,
    events: Mutex<VecDeque<TraceEvent>>,
}

impl TraceBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            events: Mutex::new(VecDeque::with_capacity(capacity.min(1024))),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `event`, evicting the oldest entry when full. Events with an
    /// empty payload are dropped and `false` is returned. A timestamp older
    /// than the newest stored event is raised to it so the log stays
    /// non-decreasing.
    pub fn append(&self, mut event: TraceEvent) -> bool {
        if event.payload.is_empty() {
            return false;
        }
        let mut events = self.lock();
        if self.capacity == 0 {
            return true;
        }
        if let Some(last) = events.back() {
            event.at = event.at.max(last.at);
        }
        if events.len() == self.capacity {
            events.pop_front();
        }
        events.push_back(event);
        true
    }

    /// The last `min(n, len)` events in chronological order.
    pub fn recent(&self, n: usize) -> Vec<TraceEvent> {
        let events = self.lock();
        let skip = events.len().saturating_sub(n);
        events.iter().skip(skip).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.lock().clear();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, VecDeque<TraceEvent>> {
        self.events.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Default for TraceBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_TRACE_CAPACITY)
    }
}
