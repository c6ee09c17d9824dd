//! Engine-wide settings. Stored in every snapshot manifest so a reloaded store
//! answers queries exactly as it did before saving.

use serde::{Deserialize, Serialize};

use crate::error::{MemoryError, Result};
use crate::index::Bm25Params;

/// How raw sessions are cut into episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkingPolicy {
    /// One episode per speaker turn, prefixed `speaker: `.
    #[default]
    PerTurn,
    /// Consecutive turns paired into one episode per exchange.
    PerExchange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub embedding_dim: usize,
    /// Episode budget `k`; entities (with categories) and edges get `2k`.
    pub top_k: usize,
    /// Minimum children per non-promoted category (`n`).
    pub compression_ratio: usize,
    pub max_layers: usize,
    /// Nodes per categorization call; larger layers are sharded.
    pub categorize_batch_size: usize,
    /// RRF smoothing constant `c` in `1 / (c + rank)`.
    pub rrf_c: u32,
    pub bm25: Bm25Params,
    /// Times the entity name is repeated ahead of the summary in the lexical
    /// entity field.
    pub name_boost: u32,
    /// Recent episodes handed to extraction as context.
    pub recent_window: usize,
    /// Lexical and vector candidates (each) for entity de-duplication.
    pub dedup_candidates: usize,
    /// Fact-embedding cosine at or above which two edges on the same entity
    /// pair are sent to the oracle as possible duplicates.
    pub edge_dedup_threshold: f64,
    /// Per-kind search depth before fusion, as a multiple of the kind budget.
    pub candidate_depth_factor: usize,
    pub allow_reflexive_edges: bool,
    pub chunking: ChunkingPolicy,
    /// Upper bound on concurrent oracle requests.
    pub parallelism: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 128,
            top_k: 10,
            compression_ratio: 3,
            max_layers: 5,
            categorize_batch_size: 64,
            rrf_c: 0,
            bm25: Bm25Params::default(),
            name_boost: 2,
            recent_window: 4,
            dedup_candidates: 5,
            edge_dedup_threshold: 0.9,
            candidate_depth_factor: 2,
            allow_reflexive_edges: false,
            chunking: ChunkingPolicy::PerTurn,
            parallelism: 4,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(MemoryError::Config(m.to_string()));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.top_k == 0 {
            return fail("top_k must be positive");
        }
        if self.compression_ratio < 2 {
            return fail("compression_ratio must be at least 2");
        }
        if self.max_layers < 1 {
            return fail("max_layers must be at least 1");
        }
        if self.categorize_batch_size == 0 {
            return fail("categorize_batch_size must be positive");
        }
        if !(self.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25.b)) {
            return fail("bm25 parameters out of range (k1 >= 0, 0 <= b <= 1)");
        }
        if self.name_boost == 0 {
            return fail("name_boost must be at least 1");
        }
        if self.dedup_candidates == 0 || self.candidate_depth_factor == 0 {
            return fail("candidate budgets must be positive");
        }
        if !(-1.0..=1.0).contains(&self.edge_dedup_threshold) {
            return fail("edge_dedup_threshold must lie in [-1, 1]");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be positive");
        }
        Ok(())
    }
}
