//! Dual-route conversational memory.
//!
//! Messages are ingested into a base knowledge graph of episodes, entities
//! and relation edges ([`ingest`]). Entities are then abstracted bottom-up
//! into a layered category hierarchy ([`hierarchy`]). Queries are answered
//! by fusing fast similarity search with a top-down walk of that hierarchy
//! ([`retrieval`]). Every model judgment goes through [`oracle`].

pub mod config;
pub mod embed;
pub mod error;
pub mod harness;
pub mod hierarchy;
pub mod index;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod retrieval;
pub mod store;

pub use config::{ChunkingPolicy, EngineConfig};
pub use embed::{Embedder, HashEmbedder, RemoteEmbedder};
pub use error::{MemoryError, Result, Violation};
pub use model::{
    CategoryEdge, CategoryRecord, Embedding, EntityRecord, EpisodeRecord, EpisodicEdge, NodeId, RelationEdge,
    Timestamp,
};
pub use store::{HierarchyGeneration, LayerNode, MemoryStore, NodeKind, NodeRecord, StoreStats, WriteBatch};
