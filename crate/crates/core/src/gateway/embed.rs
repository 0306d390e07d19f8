use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{EmbeddingBackend, GatewayError};
use crate::text::tokenize;

/// Fixed text → vector table. Unknown texts are an error.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    table: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_map(table: BTreeMap<String, Vec<f64>>) -> Result<Self, GatewayError> {
        let mut dims = table.values().map(Vec::len);
        if let Some(first) = dims.next() {
            if first == 0 || dims.any(|d| d != first) {
                return Err(GatewayError::InvalidSpec(
                    "embedding table vectors must share one non-zero dimension".into(),
                ));
            }
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let fixture_err = |detail: String| GatewayError::Fixture {
            path: path.to_path_buf(),
            detail,
        };
        let raw = fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        let table = serde_json::from_str(&raw).map_err(|e| fixture_err(e.to_string()))?;
        Self::from_map(table)
    }
}

impl EmbeddingBackend for EmbeddingTable {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| GatewayError::MissingEmbedding(text.to_string()))
    }
}

/// Offline bag-of-tokens embedder: every token is hashed (FNV-1a) into one of
/// `dim` buckets with a hash-derived sign. Deterministic across platforms.
#[derive(Debug, Clone, Copy)]
pub struct HashedTokenEmbedder {
    dim: usize,
}

impl HashedTokenEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl EmbeddingBackend for HashedTokenEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        Ok(v)
    }
}
