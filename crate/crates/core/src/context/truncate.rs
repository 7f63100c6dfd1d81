use serde::{Deserialize, Serialize};

use crate::gateway::Tokenizer;

/// Inserted where content was removed. Exactly one whitespace token, and it
/// is always separated from kept content by a newline.
pub const TRUNCATION_MARKER: &str = "[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatePolicy {
    /// Keep the beginning (documentation: section headers lead).
    KeepHead,
    /// Keep the end (traces, chat history: the most recent matters).
    KeepTail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncated {
    pub text: String,
    pub truncated: bool,
}

/// Token count of [`TRUNCATION_MARKER`] under `tokenizer`.
pub fn marker_tokens(tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count_tokens(TRUNCATION_MARKER)
}

/// Cut `text` down to at most `budget` tokens plus the marker. Text within
/// budget is returned unchanged. Kept content is sliced from the original so
/// its internal formatting survives.
pub fn truncate_block(
    text: &str,
    budget: usize,
    policy: TruncatePolicy,
    tokenizer: &dyn Tokenizer,
) -> Truncated {
    let spans = tokenizer.spans(text);
    if spans.len() <= budget {
        return Truncated {
            text: text.to_owned(),
            truncated: false,
        };
    }
    let text = if budget == 0 {
        TRUNCATION_MARKER.to_owned()
    } else {
        match policy {
            TruncatePolicy::KeepHead => {
                let end = spans[budget - 1].end;
                format!("{}\n{TRUNCATION_MARKER}", &text[..end])
            }
            TruncatePolicy::KeepTail => {
                let start = spans[spans.len() - budget].start;
                format!("{TRUNCATION_MARKER}\n{}", &text[start..])
            }
        }
    };
    Truncated {
        text,
        truncated: true,
    }
}
