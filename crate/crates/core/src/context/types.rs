use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Screen rectangle in pixels. `x`/`y` may be negative for partially
/// off-screen elements; width and height are unsigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    /// Exclusive right edge.
    pub fn right(&self) -> i64 {
        self.x as i64 + self.w as i64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> i64 {
        self.y as i64 + self.h as i64
    }
}

/// The element that currently has keyboard focus, as reported by the
/// accessibility API.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FocusElement {
    /// May be empty for unlabeled elements.
    #[serde(default)]
    pub name: String,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub help_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub bounds: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScreenState {
    pub app_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_version: Option<String>,
    pub window_title: String,
    pub focus: FocusElement,
    #[serde(default)]
    pub captured_at: i64,
}

impl ScreenState {
    /// Line-oriented structured text with a fixed field order. Absent
    /// optional fields are omitted; the capture timestamp is not part of the
    /// text so that prompts stay reproducible.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |key: &str, value: &str| {
            let _ = writeln!(out, "{key}: {}", one_line(value));
        };
        line("app", &self.app_name);
        if let Some(v) = &self.app_version {
            line("version", v);
        }
        line("window", &self.window_title);
        let f = &self.focus;
        line("focus.name", &f.name);
        line("focus.role", &f.role);
        let optional = [
            ("focus.control_type", &f.control_type),
            ("focus.value", &f.value),
            ("focus.shortcut", &f.shortcut),
            ("focus.help_text", &f.help_text),
            ("focus.description", &f.description),
        ];
        for (key, value) in optional {
            if let Some(v) = value {
                line(key, v);
            }
        }
        let b = f.bounds;
        line("focus.bounds", &format!("{},{},{},{}", b.x, b.y, b.w, b.h));
        out.pop();
        out
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\r', '\n'], " ")
}

/// An RGB8 raster captured from the desktop.
#[derive(Clone, PartialEq, Eq)]
pub struct Screenshot {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
    pub focus_rect: Option<Rect>,
    pub highlighted: bool,
    pub captured_at: i64,
}

impl std::fmt::Debug for Screenshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Screenshot")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("focus_rect", &self.focus_rect)
            .field("highlighted", &self.highlighted)
            .field("captured_at", &self.captured_at)
            .finish_non_exhaustive()
    }
}

impl Screenshot {
    pub fn blank(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
            focus_rect: None,
            highlighted: false,
            captured_at: 0,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// PNG encoding used when the screenshot crosses the process boundary.
    pub fn encode_png(&self) -> Result<Vec<u8>, image::ImageError> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out).write_image(
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Gesture,
    Speech,
}

/// One gesture (key combination) or speech output from the screen reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at: i64,
    pub kind: TraceKind,
    pub payload: String,
}

impl TraceEvent {
    pub fn gesture(at: i64, payload: impl Into<String>) -> Self {
        Self {
            at,
            kind: TraceKind::Gesture,
            payload: payload.into(),
        }
    }

    pub fn speech(at: i64, payload: impl Into<String>) -> Self {
        Self {
            at,
            kind: TraceKind::Speech,
            payload: payload.into(),
        }
    }

    /// `[<iso-timestamp>] <GESTURE|SPEECH>: <payload>`
    pub fn to_line(&self) -> String {
        let ts = chrono::DateTime::from_timestamp_millis(self.at)
            .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true))
            .unwrap_or_else(|| self.at.to_string());
        let kind = match self.kind {
            TraceKind::Gesture => "GESTURE",
            TraceKind::Speech => "SPEECH",
        };
        format!("[{ts}] {kind}: {}", one_line(&self.payload))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ContextualQa,
    AdaptiveSupport,
    ScreenDescription,
}

impl Feature {
    pub const ALL: [Feature; 3] = [
        Feature::ContextualQa,
        Feature::AdaptiveSupport,
        Feature::ScreenDescription,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Feature::ContextualQa => "contextual_qa",
            Feature::AdaptiveSupport => "adaptive_support",
            Feature::ScreenDescription => "screen_description",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Feature::ContextualQa => "Contextual Q&A",
            Feature::AdaptiveSupport => "Adaptive Support",
            Feature::ScreenDescription => "Screen Description",
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One numbered guidance step. Indices are 1-based and contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
}

/// The environment captured alongside a chat turn. Kept for logging; prompt
/// serialization of history uses text only.
#[derive(Debug, Clone, Default)]
pub struct EnvSnapshot {
    pub screen_state: Option<ScreenState>,
    pub screenshot: Option<Arc<Screenshot>>,
}

#[derive(Debug, Clone)]
pub struct ChatTurn {
    pub turn_id: u64,
    pub question: String,
    pub answer: String,
    pub steps: Vec<Step>,
    pub feature: Feature,
    pub env_snapshot: EnvSnapshot,
    pub at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalledStep {
    pub turn_id: u64,
    pub step_index: usize,
}

pub(crate) fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn screen_state_text_has_stable_order() {
        let state = ScreenState {
            app_name: "Microsoft Word".into(),
            app_version: Some("16.0".into()),
            window_title: "Document1 - Word".into(),
            focus: FocusElement {
                name: "Page Number".into(),
                role: "button".into(),
                shortcut: Some("Alt+N, N, U".into()),
                bounds: Rect::new(10, 10, 50, 20),
                ..Default::default()
            },
            captured_at: 123,
        };
        assert_eq!(
            state.to_text(),
            "app: Microsoft Word\nversion: 16.0\nwindow: Document1 - Word\n\
             focus.name: Page Number\nfocus.role: button\nfocus.shortcut: Alt+N, N, U\n\
             focus.bounds: 10,10,50,20"
        );
    }

    #[test]
    fn trace_line_format() {
        let e = TraceEvent::gesture(0, "control+shift+i");
        assert_eq!(e.to_line(), "[1970-01-01T00:00:00.000Z] GESTURE: control+shift+i");
        let s = TraceEvent::speech(1_500, "Working");
        assert_eq!(s.to_line(), "[1970-01-01T00:00:01.500Z] SPEECH: Working");
    }

    #[test]
    fn png_encoding_roundtrips_dimensions() {
        let shot = Screenshot::blank(4, 3, [255, 255, 255]);
        let png = shot.encode_png().unwrap();
        assert_eq!(&png[1..4], b"PNG");
        let decoded = image::load_from_memory(&png).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (4, 3));
    }
}
