//! Persistent domain types: identifiers, timestamps, embeddings and the
//! records that make up the base graph and the category hierarchy.
//!
//! Every record serializes to one JSON object per line; the field names here
//! are the on-disk field names (see `docs/FORMAT.md`).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embed::Embedder;
use crate::error::{MemoryError, Result, Violation};

/// Maximum number of tag descriptors on an entity or category.
pub const MAX_TAGS: usize = 5;
/// Maximum number of words in a single tag descriptor.
pub const MAX_TAG_WORDS: usize = 3;

/// Opaque node identifier. Allocated from a monotonic per-store counter and
/// never reused; ordering on ids is the engine's deterministic tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u64>()
            .map(NodeId)
            .map_err(|_| MemoryError::InvalidArgument(format!("not a node id: {s:?}")))
    }
}

/// UTC instant with second resolution. Serialized as RFC 3339
/// (`2023-05-08T13:56:00Z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn from_unix(seconds: i64) -> Result<Self> {
        Utc.timestamp_opt(seconds, 0)
            .single()
            .map(Timestamp)
            .ok_or_else(|| MemoryError::InvalidArgument(format!("timestamp out of range: {seconds}")))
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        // drop sub-second precision
        Timestamp(Utc.timestamp_opt(dt.timestamp(), 0).unwrap())
    }

    /// Parses RFC 3339, or a bare `YYYY-MM-DD` date (taken as midnight UTC).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Self::from_datetime(dt.with_timezone(&Utc)));
        }
        if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            let dt = date.and_hms_opt(0, 0, 0).unwrap().and_utc();
            return Ok(Timestamp(dt));
        }
        Err(MemoryError::InvalidArgument(format!("not an RFC 3339 timestamp: {s:?}")))
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn to_rfc3339(&self) -> String {
        self.0.to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    /// Calendar date, `YYYY-MM-DD`.
    pub fn date_string(&self) -> String {
        self.0.format("%Y-%m-%d").to_string()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_rfc3339())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    /// Unit-length copy. A zero vector stays zero, and a vector whose norm is
    /// already within 1e-6 of one is returned unchanged, which makes
    /// normalization exactly idempotent.
    pub fn normalized(&self) -> Embedding {
        let norm = self.norm();
        if norm == 0.0 || (norm - 1.0).abs() <= 1e-6 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }

    /// Cosine similarity; zero when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    pub fn validate(&self, subject: &str, dim: usize, out: &mut Vec<Violation>) {
        if self.dimension() != dim {
            out.push(Violation::new(
                subject,
                format!("embedding dimension {} != configured {}", self.dimension(), dim),
            ));
        }
        if !self.is_finite() {
            out.push(Violation::new(subject, "embedding has non-finite components"));
        }
    }
}

/// Prefix-truncates `v` to `target_dim` components and renormalizes the
/// prefix to unit length (Matryoshka-style dimension reduction).
pub fn truncate_embedding(v: &Embedding, target_dim: usize) -> Result<Embedding> {
    if target_dim == 0 {
        return Err(MemoryError::InvalidArgument("target dimension must be positive".into()));
    }
    if target_dim > v.dimension() {
        return Err(MemoryError::InvalidArgument(format!(
            "cannot truncate a {}-dimensional embedding to {} dimensions",
            v.dimension(),
            target_dim
        )));
    }
    Ok(Embedding(v.0[..target_dim].to_vec()).normalized())
}

/// One raw, timestamped chunk of conversation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: NodeId,
    pub content: String,
    pub valid_at: Timestamp,
    pub episode_embedding: Embedding,
    pub source_session: String,
}

impl EpisodeRecord {
    pub fn violations(&self, dim: usize) -> Vec<Violation> {
        let subject = format!("episode {}", self.id);
        let mut out = Vec::new();
        if self.content.trim().is_empty() {
            out.push(Violation::new(&subject, "content is empty"));
        }
        self.episode_embedding.validate(&subject, dim, &mut out);
        out
    }
}

/// A concrete named thing extracted from episodes. Always layer 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: NodeId,
    pub name: String,
    pub summary: String,
    pub tag: Vec<String>,
    pub episode_idx: BTreeSet<NodeId>,
    pub name_embedding: Embedding,
    pub summary_embedding: Embedding,
    #[serde(default)]
    pub layer: u32,
}

impl EntityRecord {
    pub fn violations(&self, dim: usize) -> Vec<Violation> {
        let subject = format!("entity {} ({:?})", self.id, self.name);
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Violation::new(&subject, "name is empty"));
        }
        if self.layer != 0 {
            out.push(Violation::new(&subject, format!("entity layer must be 0, got {}", self.layer)));
        }
        tag_violations(&subject, &self.tag, &mut out);
        self.name_embedding.validate(&subject, dim, &mut out);
        self.summary_embedding.validate(&subject, dim, &mut out);
        out
    }

    /// `name: summary`, the form used for display and reranking.
    pub fn display_text(&self) -> String {
        format!("{}: {}", self.name, self.summary)
    }
}

/// An abstract concept at layer ≥ 1 grouping lower-layer nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: NodeId,
    pub name: String,
    pub summary: String,
    pub tag: Vec<String>,
    pub episode_idx: BTreeSet<NodeId>,
    pub name_embedding: Embedding,
    pub summary_embedding: Embedding,
    pub layer: u32,
}

impl CategoryRecord {
    pub fn violations(&self, dim: usize) -> Vec<Violation> {
        let subject = format!("category {} ({:?})", self.id, self.name);
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Violation::new(&subject, "name is empty"));
        }
        if self.layer < 1 {
            out.push(Violation::new(&subject, "category layer must be >= 1"));
        }
        if has_and_connector(&self.name) {
            out.push(Violation::new(&subject, "name contains the connector word \"and\""));
        }
        tag_violations(&subject, &self.tag, &mut out);
        self.name_embedding.validate(&subject, dim, &mut out);
        self.summary_embedding.validate(&subject, dim, &mut out);
        out
    }

    pub fn display_text(&self) -> String {
        format!("{}: {}", self.name, self.summary)
    }
}

/// A fact connecting two entities, valid over `[valid_at, invalid_at)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub id: NodeId,
    pub source: NodeId,
    pub target: NodeId,
    pub fact: String,
    pub fact_embedding: Embedding,
    pub valid_at: Timestamp,
    #[serde(default)]
    pub invalid_at: Option<Timestamp>,
    /// Self-descriptive fact; the only way `source == target` is accepted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reflexive: bool,
}

impl RelationEdge {
    pub fn violations(&self, dim: usize) -> Vec<Violation> {
        let subject = format!("edge {}", self.id);
        let mut out = Vec::new();
        if self.fact.trim().is_empty() {
            out.push(Violation::new(&subject, "fact is empty"));
        }
        if self.source == self.target && !self.reflexive {
            out.push(Violation::new(&subject, "source equals target on a non-reflexive fact"));
        }
        if let Some(end) = self.invalid_at {
            if end < self.valid_at {
                out.push(Violation::new(&subject, "invalid_at precedes valid_at"));
            }
        }
        self.fact_embedding.validate(&subject, dim, &mut out);
        out
    }

    /// The endpoint opposite `entity`, if `entity` is an endpoint.
    pub fn opposite(&self, entity: NodeId) -> Option<NodeId> {
        if self.source == entity {
            Some(self.target)
        } else if self.target == entity {
            Some(self.source)
        } else {
            None
        }
    }

    /// Validity span rendered `(2023-06-17 - now)`.
    pub fn validity_span(&self) -> String {
        let end = self
            .invalid_at
            .map(|t| t.date_string())
            .unwrap_or_else(|| "now".to_string());
        format!("({} - {})", self.valid_at.date_string(), end)
    }

    pub fn display_text(&self) -> String {
        format!("{} {}", self.fact, self.validity_span())
    }
}

/// Entity → episode link; mirrors `EntityRecord::episode_idx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodicEdge {
    pub entity: NodeId,
    pub episode: NodeId,
}

/// Parent category → child node (category one layer down, or an entity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryEdge {
    pub parent: NodeId,
    pub child: NodeId,
}

/// True when `name` uses "and" as a standalone connector word.
pub fn has_and_connector(name: &str) -> bool {
    name.split(|c: char| !c.is_alphanumeric())
        .any(|w| w.eq_ignore_ascii_case("and"))
}

fn tag_violations(subject: &str, tags: &[String], out: &mut Vec<Violation>) {
    if tags.len() > MAX_TAGS {
        out.push(Violation::new(subject, format!("{} tags exceeds limit of {MAX_TAGS}", tags.len())));
    }
    for t in tags {
        let words = t.split_whitespace().count();
        if words == 0 || words > MAX_TAG_WORDS {
            out.push(Violation::new(subject, format!("tag {t:?} must have 1-{MAX_TAG_WORDS} words")));
        }
    }
}

/// Clamps a tag list to the descriptor limits: each descriptor cut to its
/// first three words, blanks and case-insensitive repeats dropped, at most
/// five kept. Returns the clamped list and whether anything was changed.
pub fn clamp_tags(tags: &[String]) -> (Vec<String>, bool) {
    let mut out: Vec<String> = Vec::new();
    let mut changed = false;
    for t in tags {
        let words: Vec<&str> = t.split_whitespace().collect();
        if words.is_empty() {
            changed = true;
            continue;
        }
        let clipped = words[..words.len().min(MAX_TAG_WORDS)].join(" ");
        if clipped != *t {
            changed = true;
        }
        if out.iter().any(|o| o.eq_ignore_ascii_case(&clipped)) {
            changed = true;
            continue;
        }
        if out.len() == MAX_TAGS {
            changed = true;
            continue;
        }
        out.push(clipped);
    }
    (out, changed)
}

/// Combines two records resolved as the same real-world entity.
///
/// Episode sets are unioned; tags are unioned newest-first (incoming before
/// existing) and cut to five; the incoming summary wins; the existing name
/// stays canonical. Both embeddings are recomputed with `embedder`.
pub fn merge_entity_attributes(
    existing: &EntityRecord,
    incoming: &EntityRecord,
    embedder: &dyn Embedder,
) -> Result<EntityRecord> {
    let dim = embedder.dimension();
    for (label, e) in [
        ("existing name_embedding", &existing.name_embedding),
        ("existing summary_embedding", &existing.summary_embedding),
        ("incoming name_embedding", &incoming.name_embedding),
        ("incoming summary_embedding", &incoming.summary_embedding),
    ] {
        if e.dimension() != dim {
            return Err(MemoryError::Config(format!(
                "{label} has dimension {}, embedder produces {dim}",
                e.dimension()
            )));
        }
    }

    let mut tags: Vec<String> = Vec::new();
    for t in incoming.tag.iter().chain(existing.tag.iter()) {
        if tags.len() == MAX_TAGS {
            break;
        }
        if !tags.iter().any(|x| x.eq_ignore_ascii_case(t)) {
            tags.push(t.clone());
        }
    }

    let summary = if incoming.summary.trim().is_empty() {
        existing.summary.clone()
    } else {
        incoming.summary.clone()
    };
    let name = existing.name.clone();
    let name_embedding = embedder.embed(&name)?;
    let summary_embedding = embedder.embed(&summary)?;

    Ok(EntityRecord {
        id: existing.id,
        episode_idx: existing.episode_idx.union(&incoming.episode_idx).copied().collect(),
        name,
        summary,
        tag: tags,
        name_embedding,
        summary_embedding,
        layer: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn entity(embedder: &HashEmbedder, id: u64, name: &str, summary: &str, tags: &[&str], eps: &[u64]) -> EntityRecord {
        EntityRecord {
            id: NodeId(id),
            name: name.into(),
            summary: summary.into(),
            tag: tags.iter().map(|s| s.to_string()).collect(),
            episode_idx: eps.iter().map(|&e| NodeId(e)).collect(),
            name_embedding: embedder.embed(name).unwrap(),
            summary_embedding: embedder.embed(summary).unwrap(),
            layer: 0,
        }
    }

    #[test]
    fn merge_unions_episode_sets() {
        let emb = HashEmbedder::new(16);
        let a = entity(&emb, 1, "Detroit", "a city", &["city"], &[3]);
        let b = entity(&emb, 9, "Detroit", "a city in Michigan", &["city"], &[14]);
        let merged = merge_entity_attributes(&a, &b, &emb).unwrap();
        assert_eq!(merged.episode_idx, [NodeId(3), NodeId(14)].into_iter().collect());
        assert_eq!(merged.id, NodeId(1));
        assert_eq!(merged.summary, "a city in Michigan");
        assert_eq!(merged.summary_embedding, emb.embed("a city in Michigan").unwrap());
    }

    #[test]
    fn merge_with_itself_is_identity() {
        let emb = HashEmbedder::new(16);
        let a = entity(&emb, 1, "Detroit", "a city", &["city", "travel spot"], &[3, 4]);
        assert_eq!(merge_entity_attributes(&a, &a, &emb).unwrap(), a);
    }

    #[test]
    fn merge_orders_tags_newest_first_and_caps_at_five() {
        let emb = HashEmbedder::new(16);
        let a = entity(&emb, 1, "Detroit", "s", &["city", "travel spot"], &[1]);
        let b = entity(
            &emb,
            2,
            "Detroit",
            "s",
            &["city", "conference venue", "Michigan", "auto industry", "Midwest"],
            &[2],
        );
        let merged = merge_entity_attributes(&a, &b, &emb).unwrap();
        assert_eq!(
            merged.tag,
            vec!["city", "conference venue", "Michigan", "auto industry", "Midwest"]
        );
    }

    #[test]
    fn merge_keeps_canonical_name() {
        let emb = HashEmbedder::new(16);
        let a = entity(&emb, 1, "Detroit", "s", &[], &[1]);
        let b = entity(&emb, 2, "Motor City", "nickname", &[], &[2]);
        assert_eq!(merge_entity_attributes(&a, &b, &emb).unwrap().name, "Detroit");
    }

    #[test]
    fn merge_rejects_dimension_mismatch() {
        let emb8 = HashEmbedder::new(8);
        let emb16 = HashEmbedder::new(16);
        let a = entity(&emb8, 1, "Detroit", "s", &[], &[1]);
        let b = entity(&emb16, 2, "Detroit", "s", &[], &[2]);
        assert!(matches!(
            merge_entity_attributes(&a, &b, &emb16),
            Err(MemoryError::Config(_))
        ));
    }

    #[test]
    fn truncate_unit_prefix() {
        let mut v = vec![0.0f32; 1024];
        v[0] = 1.0;
        let t = truncate_embedding(&Embedding(v), 128).unwrap();
        assert_eq!(t.dimension(), 128);
        assert_eq!(t.0[0], 1.0);
        assert!((t.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncate_zero_stays_zero() {
        let t = truncate_embedding(&Embedding::zeros(1024), 128).unwrap();
        assert_eq!(t, Embedding::zeros(128));
    }

    #[test]
    fn truncate_renormalizes_prefix() {
        let mut v = vec![0.0f32; 10];
        v[0] = 0.6;
        v[1] = 0.8;
        let t = truncate_embedding(&Embedding(v), 2).unwrap();
        assert_eq!(t.0, vec![0.6, 0.8]);
        assert!((t.norm() - 1.0).abs() < 1e-6);

        // prefix (3, 4) has norm 5 and must come back as (0.6, 0.8)
        let t = truncate_embedding(&Embedding(vec![3.0, 4.0, 12.0]), 2).unwrap();
        assert!((t.0[0] - 0.6).abs() < 1e-7 && (t.0[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn truncate_rejects_growing() {
        assert!(matches!(
            truncate_embedding(&Embedding::zeros(4), 8),
            Err(MemoryError::InvalidArgument(_))
        ));
    }

    #[test]
    fn and_connector_detection() {
        assert!(has_and_connector("Food and Drinks"));
        assert!(has_and_connector("University AND Courses"));
        assert!(!has_and_connector("Candy Brands"));
        assert!(!has_and_connector("Andes Mountains"));
    }

    #[test]
    fn clamp_tags_limits() {
        let tags: Vec<String> = ["a b c d", "x", "X", "y", "z", "w", "v"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (out, changed) = clamp_tags(&tags);
        assert!(changed);
        assert_eq!(out, vec!["a b c", "x", "y", "z", "w"]);
        let ok: Vec<String> = vec!["Family member".into(), "Happy kid".into()];
        assert_eq!(clamp_tags(&ok), (ok.clone(), false));
    }

    #[test]
    fn timestamp_round_trip_and_truncation() {
        let t = Timestamp::parse("2023-06-17T08:30:15.750Z").unwrap();
        assert_eq!(t.to_rfc3339(), "2023-06-17T08:30:15Z");
        assert_eq!(Timestamp::parse("2023-06-17").unwrap().to_rfc3339(), "2023-06-17T00:00:00Z");
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Timestamp>(&json).unwrap(), t);
    }

    #[test]
    fn edge_validity_span_rendering() {
        let emb = HashEmbedder::new(8);
        let mut e = RelationEdge {
            id: NodeId(1),
            source: NodeId(2),
            target: NodeId(3),
            fact: "The user completed a 5K run.".into(),
            fact_embedding: emb.embed("x").unwrap(),
            valid_at: Timestamp::parse("2023-06-10T09:00:00Z").unwrap(),
            invalid_at: None,
            reflexive: false,
        };
        assert_eq!(e.validity_span(), "(2023-06-10 - now)");
        e.invalid_at = Some(Timestamp::parse("2023-07-01").unwrap());
        assert_eq!(e.validity_span(), "(2023-06-10 - 2023-07-01)");
        e.target = e.source;
        assert!(!e.violations(8).is_empty());
        e.reflexive = true;
        assert!(e.violations(8).is_empty());
    }

    proptest::proptest! {
        #[test]
        fn truncate_is_idempotent(v in proptest::collection::vec(-10.0f32..10.0, 4..64), cut in 1usize..4) {
            let e = Embedding(v);
            let once = truncate_embedding(&e, cut).unwrap();
            let twice = truncate_embedding(&once, cut).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
