//! The concept oracle: every judgment the pipeline delegates to a language
//! model goes through [`ConceptOracle`]. Two implementations ship here, the
//! deterministic fixture-driven [`ScriptedOracle`] and the chat-completions
//! [`RemoteOracle`]. Both run their output through the validators in
//! [`validate`], so callers only ever see schema-checked payloads.

pub mod prompts;
mod remote;
mod scripted;
pub mod transport;
pub mod validate;

pub use remote::{RemoteOracle, RemoteSettings};
pub use scripted::{LexiconTerm, RelationFixture, ScriptedFixture, ScriptedOracle, SelectionRule, TaxonomyEntry};
pub use transport::{HttpTransport, JsonTransport, RetryPolicy};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{EntityRecord, EpisodeRecord, NodeId, RelationEdge, Timestamp};

/// Answer returned when the assembled context holds no evidence.
pub const INSUFFICIENT_MEMORY: &str = "insufficient memory";

/// Names that the categorizer must place in the "Speaker" category.
pub const SPEAKER_ALIASES: [&str; 3] = ["user", "i", "me"];
pub const SPEAKER_CATEGORY: &str = "Speaker";

pub fn is_speaker_alias(name: &str) -> bool {
    let n = name.trim().to_lowercase();
    SPEAKER_ALIASES.contains(&n.as_str())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// A validated oracle reply. `raw_text` is the verbatim model output (for
/// the scripted oracle, the JSON rendering of its payload).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse<T> {
    pub raw_text: String,
    pub payload: T,
    pub usage: TokenUsage,
    /// Non-fatal repairs applied during validation (dropped items, clipped tags).
    pub warnings: Vec<String>,
}

impl<T> OracleResponse<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> OracleResponse<U> {
        OracleResponse {
            raw_text: self.raw_text,
            payload: f(self.payload),
            usage: self.usage,
            warnings: self.warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "verdict", content = "id")]
pub enum DedupVerdict {
    SameAs(NodeId),
    New,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAttributes {
    pub summary: String,
    pub tag: Vec<String>,
}

/// A relation proposed by the oracle, not yet stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeDraft {
    pub source: NodeId,
    pub target: NodeId,
    pub fact: String,
    pub valid_at: Option<Timestamp>,
    pub invalid_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorizeNode {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategorizeRequest {
    pub layer: u32,
    pub nodes: Vec<CategorizeNode>,
    /// Categories already created at this layer (earlier shards), as
    /// (name, description).
    pub existing_categories: Vec<(String, String)>,
    pub compression_ratio: usize,
    /// Second attempt over undersized remainders.
    pub retry: bool,
    /// A few lines showing the previous layer's categories, for the prompt.
    pub prev_example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub name: String,
    pub child_indexes: Vec<usize>,
    #[serde(default)]
    pub tag: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorizationResult {
    pub categories: Vec<CategoryAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OfferedNode {
    pub id: NodeId,
    pub name: String,
    pub tag: Vec<String>,
    pub layer: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedNode {
    pub name: String,
    pub id: NodeId,
    pub get_all_children: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSelection {
    pub selected: Vec<SelectedNode>,
}

pub trait ConceptOracle: Send + Sync {
    fn extract_entity_names(&self, current: &EpisodeRecord, recent: &[EpisodeRecord]) -> Result<OracleResponse<Vec<String>>>;

    fn reflect_missing_names(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        already_found: &[String],
    ) -> Result<OracleResponse<Vec<String>>>;

    fn resolve_duplicates(&self, candidate_name: &str, matched_existing: &[EntityRecord]) -> Result<OracleResponse<DedupVerdict>>;

    fn extract_entity_attributes(
        &self,
        name: &str,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
    ) -> Result<OracleResponse<EntityAttributes>>;

    fn extract_edges(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        entities: &[EntityRecord],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>>;

    fn reflect_missing_edges(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        entities: &[EntityRecord],
        already_found: &[EdgeDraft],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>>;

    /// Whether `candidate` restates `existing` (same entity pair assumed).
    fn resolve_edge_duplicate(&self, existing: &RelationEdge, candidate: &EdgeDraft) -> Result<OracleResponse<bool>>;

    fn categorize_nodes(&self, request: &CategorizeRequest) -> Result<OracleResponse<CategorizationResult>>;

    fn select_nodes(&self, query: &str, offered: &[OfferedNode]) -> Result<OracleResponse<NodeSelection>>;

    fn answer(&self, query: &str, context: &str) -> Result<OracleResponse<String>>;

    fn judge(&self, question: &str, gold: &str, predicted: &str) -> Result<OracleResponse<u8>>;
}
