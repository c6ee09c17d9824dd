//! System-1 retrieval primitives: a BM25 inverted index over text fields and
//! an exact cosine-similarity index over embeddings, each partitioned by the
//! kind of item indexed.

mod lexical;
mod tokenize;
mod vector;

pub use lexical::{Bm25Params, LexicalIndex};
pub use tokenize::tokenize;
pub use vector::VectorIndex;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::NodeId;

/// Text partitions of the lexical index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextKind {
    /// Episode `content`.
    EpisodeContent,
    /// Entity `name` (boosted) followed by `summary`.
    EntityText,
    /// Edge `fact`.
    EdgeFact,
}

/// Embedding partitions of the vector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorKind {
    Episode,
    EntitySummary,
    EntityName,
    EdgeFact,
}

/// Descending score, then ascending id.
pub(crate) fn by_score_then_id(a: &(NodeId, f64), b: &(NodeId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Sorts `scored` with [`by_score_then_id`] and keeps the first `limit`.
pub(crate) fn top_k(mut scored: Vec<(NodeId, f64)>, limit: usize) -> Vec<(NodeId, f64)> {
    if limit == 0 {
        return Vec::new();
    }
    if scored.len() > limit {
        scored.select_nth_unstable_by(limit - 1, by_score_then_id);
        scored.truncate(limit);
    }
    scored.sort_by(by_score_then_id);
    scored
}
