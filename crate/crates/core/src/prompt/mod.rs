//! System instruction, per-feature templates, and rendering of context
//! bundles into provider-agnostic prompts.

mod library;
mod style;

use std::sync::Arc;

use crate::context::{Feature, Screenshot};

pub use library::{
    PromptAssembler, PromptError, PromptLibrary, PromptTemplate, Slot, SystemInstruction,
};
pub use style::{validate_response_style, StyleRule, StyleViolation, MAX_SENTENCE_WORDS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptPart {
    Text(String),
    Image(Arc<Screenshot>),
}

/// A rendered prompt: system text plus ordered user parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub system: String,
    pub user_parts: Vec<PromptPart>,
    /// The feature template this came from; `None` for auxiliary prompts
    /// such as paraphrase generation and HyDE.
    pub template_id: Option<Feature>,
    /// Tokenizer count of [`AssembledPrompt::serialized_text`].
    pub token_estimate: usize,
}

impl AssembledPrompt {
    /// System text, a blank line, then every text part in order. Images
    /// are left out.
    pub fn serialized_text(&self) -> String {
        let mut out = self.system.clone();
        out.push_str("\n\n");
        for part in &self.user_parts {
            if let PromptPart::Text(t) = part {
                out.push_str(t);
            }
        }
        out
    }

    pub fn image_count(&self) -> usize {
        self.user_parts
            .iter()
            .filter(|p| matches!(p, PromptPart::Image(_)))
            .count()
    }
}
