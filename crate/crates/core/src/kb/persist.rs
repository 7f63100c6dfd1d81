use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChunkVariant, DocChunk, IndexEntry, KbError, KnowledgeBase, VectorIndex};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const CHUNKS: &str = "chunks.jsonl";
const VARIANTS: &str = "variants.jsonl";
const VECTORS: &str = "vectors.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbManifest {
    pub format_version: u32,
    pub embedder_id: String,
    pub dim: usize,
    pub languages: Vec<String>,
    pub chunk_count: usize,
    pub variant_count: usize,
}

fn io(path: &Path, e: std::io::Error) -> KbError {
    KbError::Io(format!("{}: {e}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), KbError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| KbError::Io(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, KbError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| KbError::CorruptFile(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl KnowledgeBase {
    /// Writes `manifest.json`, `chunks.jsonl`, `variants.jsonl` and
    /// `vectors.bin` (little-endian f32, one row per variant line).
    pub fn persist(&self, dir: &Path) -> Result<(), KbError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest).map_err(|e| KbError::Io(e.to_string()))?;
        manifest.push('\n');
        let p = dir.join(MANIFEST);
        fs::write(&p, manifest).map_err(|e| io(&p, e))?;
        write_jsonl(&dir.join(CHUNKS), &self.chunks)?;
        write_jsonl(&dir.join(VARIANTS), &self.variants)?;
        let p = dir.join(VECTORS);
        let mut f = fs::File::create(&p).map_err(|e| io(&p, e))?;
        let bytes: Vec<u8> = self.index.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        f.write_all(&bytes).map_err(|e| io(&p, e))?;
        Ok(())
    }

    /// Reads a directory written by [`KnowledgeBase::persist`]. When
    /// `expected` is given, the manifest's embedder id and dim must match.
    pub fn load(dir: &Path, expected: Option<(&str, usize)>) -> Result<Self, KbError> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        let manifest: KbManifest =
            serde_json::from_str(&text).map_err(|e| KbError::CorruptFile(format!("{}: {e}", p.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(KbError::ManifestMismatch(format!(
                "format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if let Some((id, dim)) = expected {
            if manifest.embedder_id != id || manifest.dim != dim {
                return Err(KbError::ManifestMismatch(format!(
                    "knowledge base built with {} (dim {}), configured embedder is {id} (dim {dim})",
                    manifest.embedder_id, manifest.dim
                )));
            }
        }
        let chunks: Vec<DocChunk> = read_jsonl(&dir.join(CHUNKS))?;
        let variants: Vec<ChunkVariant> = read_jsonl(&dir.join(VARIANTS))?;
        if chunks.len() != manifest.chunk_count || variants.len() != manifest.variant_count {
            return Err(KbError::CorruptFile(format!(
                "manifest lists {} chunks / {} variants, files hold {} / {}",
                manifest.chunk_count,
                manifest.variant_count,
                chunks.len(),
                variants.len()
            )));
        }
        let ids: std::collections::BTreeSet<u64> = chunks.iter().map(|c| c.chunk_id).collect();
        if ids.len() != chunks.len() {
            return Err(KbError::CorruptFile("duplicate chunk id".into()));
        }
        if let Some(v) = variants.iter().find(|v| !ids.contains(&v.chunk_id)) {
            return Err(KbError::CorruptFile(format!(
                "variant {} references unknown chunk {}",
                v.variant_id, v.chunk_id
            )));
        }
        let p = dir.join(VECTORS);
        let raw = fs::read(&p).map_err(|e| io(&p, e))?;
        let want = variants.len() * manifest.dim * 4;
        if raw.len() != want {
            return Err(KbError::CorruptFile(format!(
                "{}: {} bytes, expected {want}",
                p.display(),
                raw.len()
            )));
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let entries = variants
            .iter()
            .map(|v| IndexEntry {
                variant_id: v.variant_id,
                chunk_id: v.chunk_id,
            })
            .collect();
        let index = VectorIndex::from_parts(manifest.dim, entries, data);
        Ok(Self::from_parts(manifest, chunks, variants, index))
    }
}
