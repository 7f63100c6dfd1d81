use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::types::{Feature, Screenshot};

/// Placeholder text for a block whose source could not be captured.
pub const NOT_AVAILABLE: &str = "(not available)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockTag {
    Screenshot,
    ScreenState,
    SrTrace,
    RetrievedDocs,
    ChatHistory,
    StalledStep,
}

impl BlockTag {
    pub const ALL: [BlockTag; 6] = [
        BlockTag::Screenshot,
        BlockTag::ScreenState,
        BlockTag::SrTrace,
        BlockTag::RetrievedDocs,
        BlockTag::ChatHistory,
        BlockTag::StalledStep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BlockTag::Screenshot => "screenshot",
            BlockTag::ScreenState => "screen_state",
            BlockTag::SrTrace => "sr_trace",
            BlockTag::RetrievedDocs => "retrieved_docs",
            BlockTag::ChatHistory => "chat_history",
            BlockTag::StalledStep => "stalled_step",
        }
    }

    pub fn parse(s: &str) -> Option<BlockTag> {
        BlockTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// The fixed context rule table: which blocks each feature receives, in
/// prompt order.
pub fn block_tags(feature: Feature) -> &'static [BlockTag] {
    use BlockTag::*;
    match feature {
        Feature::ContextualQa => &[Screenshot, ScreenState, RetrievedDocs, ChatHistory],
        Feature::AdaptiveSupport => &[Screenshot, ScreenState, SrTrace, ChatHistory, StalledStep],
        Feature::ScreenDescription => &[Screenshot, ScreenState],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockContent {
    Text(String),
    Image(Arc<Screenshot>),
    /// The source was not captured; rendered as [`NOT_AVAILABLE`].
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub tag: BlockTag,
    pub content: BlockContent,
    pub truncated: bool,
}

impl Block {
    pub fn text(&self) -> Option<&str> {
        match &self.content {
            BlockContent::Text(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextBundle {
    pub feature: Feature,
    pub blocks: Vec<Block>,
}

impl ContextBundle {
    pub fn tags(&self) -> Vec<BlockTag> {
        self.blocks.iter().map(|b| b.tag).collect()
    }

    pub fn block(&self, tag: BlockTag) -> Option<&Block> {
        self.blocks.iter().find(|b| b.tag == tag)
    }
}
