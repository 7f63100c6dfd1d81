use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChunkVariant, KbError};
use crate::gateway::{Embedding, EmbeddingProvider};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub variant_id: u64,
    pub chunk_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: u64,
    pub score: f32,
    pub best_variant_id: u64,
}

/// Exact flat inner-product index. Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    data: Vec<f32>,
}

/// Inner product accumulated in f64, reported as f32.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major vector data.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn push(&mut self, entry: IndexEntry, vector: &[f32]) -> Result<(), KbError> {
        if vector.len() != self.dim {
            return Err(KbError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.entries.push(entry);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub(crate) fn from_parts(dim: usize, entries: Vec<IndexEntry>, data: Vec<f32>) -> Self {
        debug_assert_eq!(entries.len() * dim, data.len());
        Self { dim, entries, data }
    }

    /// Max-pools inner products per chunk over every row and every query
    /// vector, then ranks by score descending and chunk id ascending. The
    /// best variant of a chunk is the smallest variant id among its
    /// maximal rows.
    pub fn search(&self, queries: &[Embedding], k: usize) -> Result<Vec<RetrievalHit>, KbError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        for q in queries {
            if q.dim() != self.dim {
                return Err(KbError::DimMismatch {
                    expected: self.dim,
                    got: q.dim(),
                });
            }
        }
        let mut best: BTreeMap<u64, RetrievalHit> = BTreeMap::new();
        for q in queries {
            for (i, e) in self.entries.iter().enumerate() {
                let s = dot(q.values(), self.row(i));
                best.entry(e.chunk_id)
                    .and_modify(|h| {
                        if s > h.score || (s == h.score && e.variant_id < h.best_variant_id) {
                            h.score = s;
                            h.best_variant_id = e.variant_id;
                        }
                    })
                    .or_insert(RetrievalHit {
                        chunk_id: e.chunk_id,
                        score: s,
                        best_variant_id: e.variant_id,
                    });
            }
        }
        let mut hits: Vec<RetrievalHit> = best.into_values().collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id)));
        hits.truncate(k);
        Ok(hits)
    }
}

/// Embeds every variant text, one row per variant in input order.
pub fn build_index(variants: &[ChunkVariant], embedder: &dyn EmbeddingProvider) -> Result<VectorIndex, KbError> {
    let dim = embedder.dim();
    let mut index = VectorIndex::new(dim);
    for batch in variants.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|v| v.text.as_str()).collect();
        let vectors = embedder.embed(&texts).map_err(|e| KbError::Provider(e.to_string()))?;
        if vectors.len() != batch.len() {
            return Err(KbError::Provider("embedder returned wrong number of vectors".into()));
        }
        for (v, e) in batch.iter().zip(vectors) {
            index.push(
                IndexEntry {
                    variant_id: v.variant_id,
                    chunk_id: v.chunk_id,
                },
                e.values(),
            )?;
        }
    }
    Ok(index)
}
