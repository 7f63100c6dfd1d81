use std::ops::Range;

/// Token counting used for truncation budgets and usage accounting.
///
/// Implementations must be deterministic. `spans` returns the byte ranges of
/// each token in order; `count_tokens` must equal `spans(text).len()`.
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;

    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

/// Whitespace-delimited word count. The reference tokenizer for tests and
/// the mock provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "whitespace"
    }

    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}
