use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{AssembledPrompt, PromptPart};
use crate::context::{
    marker_tokens, truncate_block, BlockContent, BlockTag, ContextBundle, Feature, TruncatePolicy,
    NOT_AVAILABLE,
};
use crate::gateway::Tokenizer;

const MANIFEST: &str = include_str!("../../assets/prompts/prompt_manifest.json");
const SYSTEM: &str = include_str!("../../assets/prompts/system_instruction.json");
const QA: &str = include_str!("../../assets/prompts/contextual_qa.txt");
const ADAPTIVE: &str = include_str!("../../assets/prompts/adaptive_support.txt");
const DESCRIBE: &str = include_str!("../../assets/prompts/screen_description.txt");
const PARAPHRASE: &str = include_str!("../../assets/prompts/paraphrase.txt");
const HYDE: &str = include_str!("../../assets/prompts/hyde.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt asset error: {0}")]
    Asset(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("slot/bundle mismatch: {0}")]
    SlotBundleMismatch(String),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::Asset(_) => "asset_error",
            PromptError::ChecksumMismatch(_) => "checksum_mismatch",
            PromptError::SlotBundleMismatch(_) => "slot_bundle_mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInstruction {
    pub version: String,
    pub preamble: String,
    pub principles: Vec<String>,
    pub uncertainty_rules: Vec<String>,
    pub output_format: String,
}

impl SystemInstruction {
    pub fn render(&self) -> String {
        let mut out = format!("{}\n\nResponse principles:\n", self.preamble);
        for (i, p) in self.principles.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, p));
        }
        out.push_str("\nWhen unsure:\n");
        for r in &self.uncertainty_rules {
            out.push_str(&format!("- {r}\n"));
        }
        out.push_str(&format!("\nOutput format: {}", self.output_format));
        out
    }
}

/// A placeholder in a template body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Block(BlockTag),
    Question,
}

impl Slot {
    pub fn parse(name: &str) -> Option<Slot> {
        if name == "question" {
            Some(Slot::Question)
        } else {
            BlockTag::parse(name).map(Slot::Block)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Lit(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: Feature,
    pub slots: Vec<Slot>,
    pub body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(template_id: Feature, declared: &[String], body: &str) -> Result<Self, PromptError> {
        let slots = declared
            .iter()
            .map(|s| Slot::parse(s).ok_or_else(|| PromptError::Asset(format!("unknown slot {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let re = Regex::new(r"\{\{(\w+)\}\}").expect("static regex");
        let mut segments = Vec::new();
        let mut used = Vec::new();
        let mut last = 0;
        for cap in re.captures_iter(body) {
            let whole = cap.get(0).expect("match");
            let slot = Slot::parse(&cap[1])
                .ok_or_else(|| PromptError::Asset(format!("unknown slot {:?} in body", &cap[1])))?;
            if !slots.contains(&slot) {
                return Err(PromptError::Asset(format!(
                    "slot {:?} used but not declared",
                    &cap[1]
                )));
            }
            if used.contains(&slot) {
                return Err(PromptError::Asset(format!("slot {:?} used twice", &cap[1])));
            }
            used.push(slot);
            segments.push(Segment::Lit(body[last..whole.start()].to_owned()));
            segments.push(Segment::Slot(slot));
            last = whole.end();
        }
        segments.push(Segment::Lit(body[last..].to_owned()));
        if used.len() != slots.len() {
            return Err(PromptError::Asset(format!(
                "{template_id}: declared slots not all present in body"
            )));
        }
        Ok(Self {
            template_id,
            slots,
            body: body.to_owned(),
            segments,
        })
    }

    /// Block tags this template consumes, as a set.
    pub fn block_slots(&self) -> BTreeSet<BlockTag> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Block(t) => Some(*t),
                Slot::Question => None,
            })
            .collect()
    }

    pub fn wants_question(&self) -> bool {
        self.slots.contains(&Slot::Question)
    }

    /// Template text with every placeholder removed.
    pub fn literal_text(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Lit(l) => Some(l.as_str()),
                Segment::Slot(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    file: String,
    slots: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    version: String,
    system: String,
    templates: BTreeMap<String, ManifestEntry>,
    checksums: BTreeMap<String, String>,
    auxiliary: Auxiliary,
}

#[derive(Debug, Deserialize)]
struct Auxiliary {
    paraphrase: String,
    hyde: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The system instruction plus the three templates, loaded from versioned
/// assets whose SHA-256 checksums are pinned in `prompt_manifest.json`.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    pub version: String,
    pub instruction: SystemInstruction,
    system_text: String,
    templates: BTreeMap<Feature, PromptTemplate>,
    paraphrase: String,
    hyde: String,
}

impl PromptLibrary {
    /// The assets compiled into the binary.
    pub fn builtin() -> Self {
        Self::from_sources(MANIFEST, &|name| match name {
            "system_instruction.json" => Ok(SYSTEM.to_owned()),
            "contextual_qa.txt" => Ok(QA.to_owned()),
            "adaptive_support.txt" => Ok(ADAPTIVE.to_owned()),
            "screen_description.txt" => Ok(DESCRIBE.to_owned()),
            "paraphrase.txt" => Ok(PARAPHRASE.to_owned()),
            "hyde.txt" => Ok(HYDE.to_owned()),
            other => Err(PromptError::Asset(format!("no builtin asset {other}"))),
        })
        .expect("builtin prompt assets are valid")
    }

    /// Loads a replacement asset directory with the same layout.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PromptError::Asset(format!("{name}: {e}")))
        };
        Self::from_sources(&read("prompt_manifest.json")?, &read)
    }

    fn from_sources(
        manifest: &str,
        read: &dyn Fn(&str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let manifest: Manifest =
            serde_json::from_str(manifest).map_err(|e| PromptError::Asset(format!("manifest: {e}")))?;
        let load = |name: &str| -> Result<String, PromptError> {
            let text = read(name)?;
            let expected = manifest
                .checksums
                .get(name)
                .ok_or_else(|| PromptError::Asset(format!("{name}: no checksum in manifest")))?;
            if &sha256_hex(text.as_bytes()) != expected {
                return Err(PromptError::ChecksumMismatch(name.to_owned()));
            }
            Ok(text)
        };
        let instruction: SystemInstruction = serde_json::from_str(&load(&manifest.system)?)
            .map_err(|e| PromptError::Asset(format!("system instruction: {e}")))?;
        if instruction.principles.len() != 4 {
            return Err(PromptError::Asset("expected exactly 4 principles".into()));
        }
        if instruction.uncertainty_rules.len() != 2 {
            return Err(PromptError::Asset("expected exactly 2 uncertainty rules".into()));
        }
        let mut templates = BTreeMap::new();
        for feature in Feature::ALL {
            let entry = manifest
                .templates
                .get(feature.as_str())
                .ok_or_else(|| PromptError::Asset(format!("no template for {feature}")))?;
            let t = PromptTemplate::parse(feature, &entry.slots, &load(&entry.file)?)?;
            templates.insert(feature, t);
        }
        Ok(Self {
            paraphrase: load(&manifest.auxiliary.paraphrase)?,
            hyde: load(&manifest.auxiliary.hyde)?,
            version: manifest.version,
            system_text: instruction.render(),
            instruction,
            templates,
        })
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn template(&self, feature: Feature) -> &PromptTemplate {
        &self.templates[&feature]
    }

    /// Paraphrase-generation prompt with `{{count}}`, `{{language}}`,
    /// `{{software}}`, `{{section}}` and `{{content}}` placeholders.
    pub fn paraphrase_template(&self) -> &str {
        &self.paraphrase
    }

    /// HyDE prompt with a `{{query}}` placeholder.
    pub fn hyde_template(&self) -> &str {
        &self.hyde
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Renders bundles into prompts with a fixed library and tokenizer.
#[derive(Clone)]
pub struct PromptAssembler {
    library: Arc<PromptLibrary>,
    tokenizer: Arc<dyn Tokenizer>,
    question_budget: usize,
}

impl std::fmt::Debug for PromptAssembler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PromptAssembler")
            .field("version", &self.library.version)
            .field("tokenizer", &self.tokenizer.id())
            .field("question_budget", &self.question_budget)
            .finish()
    }
}

impl PromptAssembler {
    pub fn new(library: Arc<PromptLibrary>, tokenizer: Arc<dyn Tokenizer>, question_budget: usize) -> Self {
        Self {
            library,
            tokenizer,
            question_budget,
        }
    }

    pub fn library(&self) -> &PromptLibrary {
        &self.library
    }

    /// Token allowance outside the blocks themselves: system text, template
    /// literals, and per slot the larger of the truncation marker and the
    /// missing-block marker.
    pub fn overhead_tokens(&self, feature: Feature) -> usize {
        let tok = self.tokenizer.as_ref();
        let t = self.library.template(feature);
        let per_slot = marker_tokens(tok).max(tok.count_tokens(NOT_AVAILABLE));
        tok.count_tokens(self.library.system_text())
            + tok.count_tokens(&t.literal_text())
            + per_slot * t.slots.len()
    }

    pub fn render(
        &self,
        template_id: Feature,
        bundle: &ContextBundle,
        question: Option<&str>,
    ) -> Result<AssembledPrompt, PromptError> {
        let template = self.library.template(template_id);
        if bundle.feature != template_id {
            return Err(PromptError::SlotBundleMismatch(format!(
                "bundle is for {} but template is {}",
                bundle.feature, template_id
            )));
        }
        if template.wants_question() != question.is_some() {
            return Err(PromptError::SlotBundleMismatch(format!(
                "{template_id}: question {}",
                if question.is_some() { "not expected" } else { "required" }
            )));
        }
        let tags = bundle.tags();
        let tag_set: BTreeSet<BlockTag> = tags.iter().copied().collect();
        if tag_set.len() != tags.len() || tag_set != template.block_slots() {
            return Err(PromptError::SlotBundleMismatch(format!(
                "{template_id}: bundle blocks {:?} do not match template slots",
                tags.iter().map(BlockTag::as_str).collect::<Vec<_>>()
            )));
        }

        let mut parts = Vec::new();
        let mut text = String::new();
        for seg in &template.segments {
            match seg {
                Segment::Lit(l) => text.push_str(l),
                Segment::Slot(Slot::Question) => {
                    let q = truncate_block(
                        question.unwrap_or_default(),
                        self.question_budget,
                        TruncatePolicy::KeepHead,
                        self.tokenizer.as_ref(),
                    );
                    text.push_str(&q.text);
                }
                Segment::Slot(Slot::Block(tag)) => {
                    let block = bundle.block(*tag).expect("checked above");
                    match &block.content {
                        BlockContent::Text(t) => text.push_str(t),
                        BlockContent::Missing => text.push_str(NOT_AVAILABLE),
                        BlockContent::Image(img) => {
                            if !text.is_empty() {
                                parts.push(PromptPart::Text(std::mem::take(&mut text)));
                            }
                            parts.push(PromptPart::Image(Arc::clone(img)));
                        }
                    }
                }
            }
        }
        if !text.is_empty() {
            parts.push(PromptPart::Text(text));
        }
        let mut prompt = AssembledPrompt {
            system: self.library.system_text().to_owned(),
            user_parts: parts,
            template_id: Some(template_id),
            token_estimate: 0,
        };
        prompt.token_estimate = self.tokenizer.count_tokens(&prompt.serialized_text());
        Ok(prompt)
    }
}
