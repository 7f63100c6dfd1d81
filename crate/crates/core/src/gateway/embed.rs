use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, GatewayError};

pub const HASHING_EMBEDDER_ID: &str = "test-fnv-256";

/// A dense embedding. Unit length, or all zeros for empty input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Scales to unit length in place; a zero vector stays zero.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.0 {
                *v = (*v as f64 / n) as f32;
            }
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Deterministic signed feature-hashing embedder.
///
/// Lowercases, splits on runs of non-alphanumeric characters, hashes each
/// token with 64-bit FNV-1a, adds ±1 to bucket `h mod dim` (minus when the
/// top bit of `h` is set), then L2-normalizes. Token order does not matter.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            id: if dim == 256 {
                HASHING_EMBEDDER_ID.to_owned()
            } else {
                format!("test-fnv-{dim}")
            },
        }
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let mut acc = vec![0i64; self.dim];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            acc[bucket] += if h >> 63 == 0 { 1 } else { -1 };
        }
        let norm = acc.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding::zeros(self.dim);
        }
        Embedding(acc.iter().map(|&v| (v as f64 / norm) as f32).collect())
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
