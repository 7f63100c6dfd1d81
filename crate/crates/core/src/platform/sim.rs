use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, Weak};

use serde::{Deserialize, Serialize};

use super::{AdapterCapabilities, AdapterError, PlatformAdapter, Subscription, TraceSink};
use crate::context::{now_ms, Rect, ScreenState, Screenshot, TraceEvent};

/// Declarative raster: a solid background with filled, labeled rectangles
/// painted in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    #[serde(default)]
    pub rects: Vec<SpecRect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRect {
    #[serde(default)]
    pub label: String,
    pub rect: Rect,
    pub fill: [u8; 3],
}

fn default_background() -> [u8; 3] {
    [240, 240, 240]
}

impl Default for RasterSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            background: default_background(),
            rects: Vec::new(),
        }
    }
}

impl RasterSpec {
    pub fn render(&self) -> Screenshot {
        let mut shot = Screenshot::blank(self.width, self.height, self.background);
        for r in &self.rects {
            let x0 = (r.rect.x as i64).max(0);
            let y0 = (r.rect.y as i64).max(0);
            let x1 = r.rect.right().min(self.width as i64);
            let y1 = r.rect.bottom().min(self.height as i64);
            for y in y0..y1 {
                for x in x0..x1 {
                    shot.set_pixel(x as u32, y as u32, r.fill);
                }
            }
        }
        shot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesktopFrame {
    pub screen_state: ScreenState,
    #[serde(default)]
    pub screenshot: RasterSpec,
    /// Screen-reader events produced while arriving at this frame.
    #[serde(default)]
    pub trace: Vec<TraceEvent>,
    /// Free-form facts about the simulated world (e.g. whether a page number
    /// was inserted). Used by scenario success predicates.
    #[serde(default)]
    pub marks: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDesktopScript {
    #[serde(default)]
    pub capabilities: AdapterCapabilities,
    pub frames: Vec<DesktopFrame>,
}

impl SimulatedDesktopScript {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames.is_empty() {
            return Err("desktop script has no frames".into());
        }
        for (i, f) in self.frames.iter().enumerate() {
            if let Some(e) = f.trace.iter().find(|e| e.payload.is_empty()) {
                return Err(format!("frame {i}: trace event at {} has empty payload", e.at));
            }
        }
        Ok(())
    }

    /// A single blank frame with focus on the desktop.
    pub fn blank() -> Self {
        Self {
            capabilities: AdapterCapabilities::default(),
            frames: vec![DesktopFrame {
                screen_state: ScreenState {
                    app_name: "Desktop".into(),
                    window_title: "Desktop".into(),
                    focus: crate::context::FocusElement {
                        role: "pane".into(),
                        ..Default::default()
                    },
                    ..Default::default()
                },
                screenshot: RasterSpec::default(),
                trace: Vec::new(),
                marks: BTreeMap::new(),
            }],
        }
    }
}

struct SimState {
    cursor: usize,
    available: bool,
}

struct Sinks {
    next_id: u64,
    sinks: Vec<(u64, TraceSink)>,
}

/// Scripted desktop. Frames advance on demand; each frame's trace events are
/// delivered to subscribers when the frame is entered. Subscribers that join
/// late receive the trace of every frame up to the current one.
pub struct SimulatedDesktop {
    script: SimulatedDesktopScript,
    state: Mutex<SimState>,
    sinks: Arc<Mutex<Sinks>>,
}

impl std::fmt::Debug for SimulatedDesktop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatedDesktop")
            .field("frames", &self.script.frames.len())
            .field("cursor", &self.cursor())
            .finish()
    }
}

impl SimulatedDesktop {
    pub fn new(script: SimulatedDesktopScript) -> Result<Self, String> {
        script.validate()?;
        Ok(Self {
            script,
            state: Mutex::new(SimState {
                cursor: 0,
                available: true,
            }),
            sinks: Arc::new(Mutex::new(Sinks {
                next_id: 0,
                sinks: Vec::new(),
            })),
        })
    }

    pub fn script(&self) -> &SimulatedDesktopScript {
        &self.script
    }

    pub fn set_available(&self, available: bool) {
        self.lock_state().available = available;
    }

    pub fn cursor(&self) -> usize {
        self.lock_state().cursor
    }

    pub fn current_frame(&self) -> &DesktopFrame {
        &self.script.frames[self.cursor()]
    }

    /// Moves to the next frame, saturating at the last one. Returns the new
    /// cursor.
    pub fn advance(&self) -> usize {
        let target = self.cursor() + 1;
        self.advance_to(target)
    }

    /// Moves forward to `frame` (clamped), delivering the trace of every
    /// frame entered on the way. Moving backwards is ignored.
    pub fn advance_to(&self, frame: usize) -> usize {
        let (from, to) = {
            let mut st = self.lock_state();
            let to = frame.min(self.script.frames.len() - 1);
            let from = st.cursor;
            if to > from {
                st.cursor = to;
            }
            (from, st.cursor)
        };
        for f in (from + 1)..=to {
            self.deliver(&self.script.frames[f].trace);
        }
        to
    }

    /// Injects an ad-hoc trace event.
    pub fn emit(&self, event: TraceEvent) {
        self.deliver(std::slice::from_ref(&event));
    }

    fn deliver(&self, events: &[TraceEvent]) {
        let mut ordered = events.to_vec();
        ordered.sort_by_key(|e| e.at);
        let sinks: Vec<TraceSink> = {
            let s = self.sinks.lock().unwrap_or_else(|e| e.into_inner());
            s.sinks.iter().map(|(_, f)| Arc::clone(f)).collect()
        };
        for e in ordered {
            for sink in &sinks {
                sink(e.clone());
            }
        }
    }

    fn lock_state(&self) -> std::sync::MutexGuard<'_, SimState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_available(&self) -> Result<usize, AdapterError> {
        let st = self.lock_state();
        if st.available {
            Ok(st.cursor)
        } else {
            Err(AdapterError::Unavailable)
        }
    }
}

impl PlatformAdapter for SimulatedDesktop {
    fn capabilities(&self) -> AdapterCapabilities {
        self.script.capabilities
    }

    fn get_screen_state(&self) -> Result<ScreenState, AdapterError> {
        let cursor = self.check_available()?;
        let mut state = self.script.frames[cursor].screen_state.clone();
        state.captured_at = now_ms();
        Ok(state)
    }

    fn get_screenshot(&self) -> Result<Screenshot, AdapterError> {
        let cursor = self.check_available()?;
        if !self.script.capabilities.can_screenshot {
            return Err(AdapterError::CapabilityMissing("screenshot"));
        }
        let mut shot = self.script.frames[cursor].screenshot.render();
        shot.captured_at = now_ms();
        Ok(shot)
    }

    fn subscribe_trace(&self, sink: TraceSink) -> Result<Subscription, AdapterError> {
        let cursor = self.check_available()?;
        if !self.script.capabilities.can_trace {
            return Err(AdapterError::CapabilityMissing("trace"));
        }
        let id = {
            let mut s = self.sinks.lock().unwrap_or_else(|e| e.into_inner());
            let id = s.next_id;
            s.next_id += 1;
            s.sinks.push((id, Arc::clone(&sink)));
            id
        };
        let backlog: Vec<TraceEvent> = self.script.frames[..=cursor]
            .iter()
            .flat_map(|f| {
                let mut t = f.trace.clone();
                t.sort_by_key(|e| e.at);
                t
            })
            .collect();
        for e in backlog {
            sink(e);
        }
        let registry: Weak<Mutex<Sinks>> = Arc::downgrade(&self.sinks);
        Ok(Subscription::new(move || {
            if let Some(reg) = registry.upgrade() {
                let mut s = reg.lock().unwrap_or_else(|e| e.into_inner());
                s.sinks.retain(|(sid, _)| *sid != id);
            }
        }))
    }
}
