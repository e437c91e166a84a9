//! Prompt embeddings: the offline mock embedder, the remote client, the
//! on-disk cache and table construction.

mod cache;
mod mock;
mod remote;
mod server;
mod source;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::EmbeddingCache;
pub use mock::{cosine, mock_embed, mock_model_id, tokenize, MIN_MOCK_DIM};
pub use remote::{EndpointConfig, EndpointInfo, RemoteEmbedder, RetryPolicy, DEFAULT_TOKEN_ENV};
pub use server::{MockServer, MockServerConfig};
pub use source::{embed_cached, records_from_cache, Embedder, MockEmbedder};
pub use table::{build_table, projection_matrix, row_rms, EmbeddingTable, Provenance};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("mock embedding dim must be at least {min}, got {dim}")]
    DimTooSmall { dim: usize, min: usize },
    #[error("cache file {path} is corrupt: {reason}")]
    CacheCorrupt { path: String, reason: String },
    #[error("cache conflict for key {key} (fingerprint {fingerprint:016x}): stored vector differs")]
    Conflict { key: String, fingerprint: u64 },
    #[error("cache holds model {cache_model} dim {cache_dim}, record has model {model} dim {dim}")]
    CacheMismatch { cache_model: String, cache_dim: usize, model: String, dim: usize },
    #[error("vector for {key} is invalid: {reason}")]
    InvalidVector { key: String, reason: String },
    #[error("no embedding record for {field} values: {}", .missing.join(", "))]
    Coverage { field: String, missing: Vec<String> },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("request failed for prompt indices {indices:?}: {message}")]
    Batch { indices: Vec<usize>, message: String },
    #[error("http error: {0}")]
    Http(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One prompt embedding, keyed by vocabulary key and prompt fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub key: String,
    pub prompt_fingerprint: u64,
    pub model_id: String,
    pub dim: usize,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(key: impl Into<String>, prompt_fingerprint: u64, model_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self { key: key.into(), prompt_fingerprint, model_id: model_id.into(), dim: vector.len(), vector }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 || self.vector.len() != self.dim {
            return Err(EmbedError::InvalidVector {
                key: self.key.clone(),
                reason: format!("length {} does not match dim {}", self.vector.len(), self.dim),
            });
        }
        if let Some(i) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector { key: self.key.clone(), reason: format!("non-finite value at {i}") });
        }
        Ok(())
    }
}
