use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::session::parse_steps;

/// Sentence-length ceiling in words.
pub const MAX_SENTENCE_WORDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleRule {
    /// Mouse action with no keyboard alternative in the same step.
    MouseOnly,
    /// Colour or position reference with no element name.
    VisualOnly,
    /// A sentence longer than [`MAX_SENTENCE_WORDS`].
    TooLong,
}

impl StyleRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            StyleRule::MouseOnly => "mouse_only",
            StyleRule::VisualOnly => "visual_only",
            StyleRule::TooLong => "too_long",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleViolation {
    pub rule: StyleRule,
    /// 1-based step the violation was found in.
    pub step: usize,
}

struct Patterns {
    mouse: Regex,
    keyboard: Regex,
    visual: Regex,
    named: Regex,
    sentence_end: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        mouse: Regex::new(
            r"(?i)\b(click|clicks|clicked|clicking|double-click|right-click|drag|drags|dragging|hover|hovering|mouse|scroll wheel|cursor over)\b",
        )
        .expect("static regex"),
        keyboard: Regex::new(
            r"(?i)(\b(press|presses|pressing|key|keys|keyboard|shortcut|hotkey|tab|enter|return|escape|esc|alt|ctrl|control|shift|windows key|arrow|spacebar|space|f[1-9]|f1[0-2]|type|typing)\b|\w\+\w)",
        )
        .expect("static regex"),
        visual: Regex::new(
            r"\b(red|blue|green|yellow|orange|purple|pink|gr[ae]y|black|white|brown|colou?red|left|right|top|bottom|upper|lower|corner|middle|center|centre|above|below|beside|next to|icon)\b",
        )
        .expect("static regex"),
        named: Regex::new(
            r#"("[^"]+"|“[^”]+”|'[^']+'|‘[^’]+’|\b[A-Z][\w…]*(?:\s+[A-Z0-9][\w…]*)*\s+(?i:button|menu|menu item|tab|list|list item|field|edit|box|check box|checkbox|combo box|dialog|pane|link|option|item|area|window|toolbar|ribbon|group|panel|view)\b)"#,
        )
        .expect("static regex"),
        sentence_end: Regex::new(r"[.!?](\s+|$)").expect("static regex"),
    })
}

fn longest_sentence_words(text: &str) -> usize {
    patterns()
        .sentence_end
        .split(text)
        .map(|s| s.split_whitespace().count())
        .max()
        .unwrap_or(0)
}

/// Lints guidance text against the response principles. Checks run per
/// parsed step; a compliant or empty text yields no violations.
pub fn validate_response_style(text: &str) -> Vec<StyleViolation> {
    let p = patterns();
    let parsed = parse_steps(text);
    let mut out = Vec::new();
    for step in &parsed.steps {
        let t = step.text.as_str();
        if p.mouse.is_match(t) && !p.keyboard.is_match(t) {
            out.push(StyleViolation { rule: StyleRule::MouseOnly, step: step.index });
        }
        if p.visual.is_match(t) && !p.named.is_match(t) {
            out.push(StyleViolation { rule: StyleRule::VisualOnly, step: step.index });
        }
        if longest_sentence_words(t) > MAX_SENTENCE_WORDS {
            out.push(StyleViolation { rule: StyleRule::TooLong, step: step.index });
        }
    }
    out
}
