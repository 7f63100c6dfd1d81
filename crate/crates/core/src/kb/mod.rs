//! Documentation knowledge base: heading-based chunking, paraphrase
//! variants linked to a shared chunk id, an exact flat inner-product index,
//! optional HyDE query expansion, max-pool ranking, and on-disk persistence.

mod chunk;
mod index;
mod persist;
mod variants;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gateway::{CompletionProvider, EmbeddingProvider};
use crate::prompt::PromptLibrary;

pub use chunk::{chunk_document, load_documents, parse_markdown, DocChunk, Section, SourceDocument};
pub use index::{build_index, dot, IndexEntry, RetrievalHit, VectorIndex};
pub use persist::{KbManifest, FORMAT_VERSION};
pub use variants::{
    assemble_variants, generate_paraphrases, generate_variants, paraphrase_prompt, parse_paraphrases,
    ChunkVariant, DEFAULT_VARIANTS_PER_LANGUAGE,
};

/// Retrieved chunks per query when not configured.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbError {
    #[error("io error: {0}")]
    Io(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("chunk {chunk_id}: expected {expected} {language} paraphrases, got {got}")]
    VariantCountMismatch {
        chunk_id: u64,
        language: String,
        expected: usize,
        got: usize,
    },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("no knowledge base loaded")]
    IndexNotLoaded,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
}

impl KbError {
    pub fn code(&self) -> &'static str {
        match self {
            KbError::Io(_) => "io_error",
            KbError::ManifestMismatch(_) => "manifest_mismatch",
            KbError::CorruptFile(_) => "corrupt_file",
            KbError::DimMismatch { .. } => "dim_mismatch",
            KbError::VariantCountMismatch { .. } => "variant_count_mismatch",
            KbError::Provider(_) => "provider_error",
            KbError::EmptyQuery => "empty_query",
            KbError::IndexNotLoaded => "index_not_loaded",
            KbError::InvalidDocument(_) => "invalid_document",
        }
    }
}

/// Generates a hypothetical answer passage for `query`. Provider failure
/// or an empty reply falls back to the query itself.
pub fn hyde_expand(query: &str, provider: &dyn CompletionProvider, template: &str) -> Result<String, KbError> {
    if query.trim().is_empty() {
        return Err(KbError::EmptyQuery);
    }
    let prompt = template.replace("{{query}}", query);
    match provider.complete(&variants::text_request(prompt)) {
        Ok(r) if !r.text.trim().is_empty() => Ok(r.text.trim().to_owned()),
        _ => Ok(query.to_owned()),
    }
}

/// Options for [`KnowledgeBase::build`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexOptions {
    pub languages: Vec<String>,
    pub variants_per_language: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            languages: vec!["en".to_owned()],
            variants_per_language: DEFAULT_VARIANTS_PER_LANGUAGE,
        }
    }
}

/// Chunks, variants and vectors, plus the manifest that pins the embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub manifest: KbManifest,
    pub chunks: Vec<DocChunk>,
    pub variants: Vec<ChunkVariant>,
    pub index: VectorIndex,
    by_id: BTreeMap<u64, usize>,
}

impl KnowledgeBase {
    pub fn from_parts(
        manifest: KbManifest,
        chunks: Vec<DocChunk>,
        variants: Vec<ChunkVariant>,
        index: VectorIndex,
    ) -> Self {
        let by_id = chunks.iter().enumerate().map(|(i, c)| (c.chunk_id, i)).collect();
        Self {
            manifest,
            chunks,
            variants,
            index,
            by_id,
        }
    }

    /// Chunks every document, asks `provider` for paraphrases, and embeds
    /// all variants. Per-chunk paraphrase failures are returned as warnings;
    /// those chunks are indexed with their original text only.
    pub fn build(
        docs: &[SourceDocument],
        options: &IndexOptions,
        provider: &dyn CompletionProvider,
        embedder: &dyn EmbeddingProvider,
        prompts: &PromptLibrary,
    ) -> Result<(Self, Vec<KbError>), KbError> {
        let mut chunks = Vec::new();
        for doc in docs {
            let next = chunks.len() as u64;
            chunks.extend(chunk_document(doc, next));
        }
        let mut variants = Vec::new();
        let mut warnings = Vec::new();
        for c in &chunks {
            let (v, err) = generate_variants(
                prompts.paraphrase_template(),
                c,
                &options.languages,
                options.variants_per_language,
                provider,
                variants.len() as u64,
            );
            variants.extend(v);
            warnings.extend(err);
        }
        let index = build_index(&variants, embedder)?;
        let manifest = KbManifest {
            format_version: FORMAT_VERSION,
            embedder_id: embedder.embedder_id().to_owned(),
            dim: embedder.dim(),
            languages: options.languages.clone(),
            chunk_count: chunks.len(),
            variant_count: variants.len(),
        };
        Ok((Self::from_parts(manifest, chunks, variants, index), warnings))
    }

    pub fn chunk(&self, chunk_id: u64) -> Option<&DocChunk> {
        self.by_id.get(&chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn variant(&self, variant_id: u64) -> Option<&ChunkVariant> {
        // ids are assigned consecutively from 0 but loaded files may differ
        match self.variants.get(variant_id as usize) {
            Some(v) if v.variant_id == variant_id => Some(v),
            _ => self.variants.iter().find(|v| v.variant_id == variant_id),
        }
    }

    fn check_embedder(&self, embedder: &dyn EmbeddingProvider) -> Result<(), KbError> {
        if embedder.embedder_id() != self.manifest.embedder_id || embedder.dim() != self.manifest.dim {
            return Err(KbError::ManifestMismatch(format!(
                "index built with {} (dim {}), query embedder is {} (dim {})",
                self.manifest.embedder_id,
                self.manifest.dim,
                embedder.embedder_id(),
                embedder.dim()
            )));
        }
        Ok(())
    }

    /// The query texts that will be embedded: the raw query, plus the HyDE
    /// passage when `use_hyde` is set and a provider is given.
    pub fn query_texts(
        &self,
        query: &str,
        use_hyde: bool,
        provider: Option<&dyn CompletionProvider>,
        prompts: &PromptLibrary,
    ) -> Result<Vec<String>, KbError> {
        if query.trim().is_empty() {
            return Err(KbError::EmptyQuery);
        }
        let mut texts = vec![query.to_owned()];
        if let (true, Some(p)) = (use_hyde, provider) {
            texts.push(hyde_expand(query, p, prompts.hyde_template())?);
        }
        Ok(texts)
    }

    /// Top-`k` chunks for `query` by max-pooled inner product.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        use_hyde: bool,
        embedder: &dyn EmbeddingProvider,
        provider: Option<&dyn CompletionProvider>,
        prompts: &PromptLibrary,
    ) -> Result<Vec<RetrievalHit>, KbError> {
        self.check_embedder(embedder)?;
        let texts = self.query_texts(query, use_hyde, provider, prompts)?;
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = embedder.embed(&refs).map_err(|e| KbError::Provider(e.to_string()))?;
        self.index.search(&vectors, k)
    }

    pub fn format_hits(&self, hits: &[RetrievalHit]) -> String {
        format_hits(hits, &self.chunks)
    }
}

/// One `### <software> — <path>` section per hit, in rank order.
pub fn format_hits(hits: &[RetrievalHit], chunks: &[DocChunk]) -> String {
    hits.iter()
        .filter_map(|h| chunks.iter().find(|c| c.chunk_id == h.chunk_id))
        .map(|c| format!("### {}\n{}", c.title(), c.content))
        .collect::<Vec<_>>()
        .join("\n\n")
}
