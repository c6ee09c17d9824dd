//! Embedded property-graph store.
//!
//! The base graph (episodes, entities, relation edges, episodic edges) is
//! mutated through `&mut self`, which gives ingestion its exclusive writer
//! role. The category hierarchy lives in an `Arc`-published generation that
//! can be swapped through `&self` while readers keep the generation they
//! already hold.

mod generation;
mod snapshot;

pub use generation::HierarchyGeneration;
pub use snapshot::{SnapshotManifest, StreamInfo, SNAPSHOT_SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::config::EngineConfig;
use crate::error::{MemoryError, Result, Violation};
use crate::index::{tokenize, LexicalIndex, TextKind, VectorIndex, VectorKind};
use crate::model::{
    CategoryEdge, CategoryRecord, Embedding, EntityRecord, EpisodeRecord, EpisodicEdge, NodeId, RelationEdge,
    Timestamp,
};

#[derive(Debug, Clone, PartialEq)]
pub enum NodeRecord {
    Episode(EpisodeRecord),
    Entity(EntityRecord),
    Category(CategoryRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Episode,
    Entity,
    Edge,
    Category,
}

/// A node returned by [`MemoryStore::nodes_at_layer`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerNode {
    Entity(EntityRecord),
    Category(CategoryRecord),
}

impl LayerNode {
    pub fn id(&self) -> NodeId {
        match self {
            LayerNode::Entity(e) => e.id,
            LayerNode::Category(c) => c.id,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            LayerNode::Entity(e) => &e.name,
            LayerNode::Category(c) => &c.name,
        }
    }

    pub fn summary(&self) -> &str {
        match self {
            LayerNode::Entity(e) => &e.summary,
            LayerNode::Category(c) => &c.summary,
        }
    }

    pub fn tag(&self) -> &[String] {
        match self {
            LayerNode::Entity(e) => &e.tag,
            LayerNode::Category(c) => &c.tag,
        }
    }

    pub fn layer(&self) -> u32 {
        match self {
            LayerNode::Entity(_) => 0,
            LayerNode::Category(c) => c.layer,
        }
    }

    pub fn episode_idx(&self) -> &BTreeSet<NodeId> {
        match self {
            LayerNode::Entity(e) => &e.episode_idx,
            LayerNode::Category(c) => &c.episode_idx,
        }
    }
}

/// Records staged for one atomic base-graph write. Either every record lands
/// or none does.
#[derive(Debug, Clone, Default)]
pub struct WriteBatch {
    pub episodes: Vec<EpisodeRecord>,
    pub entities: Vec<EntityRecord>,
    pub edges: Vec<RelationEdge>,
}

impl WriteBatch {
    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty() && self.entities.is_empty() && self.edges.is_empty()
    }
}

/// Node and edge counts, per kind and per hierarchy layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub episodes: usize,
    pub entities: usize,
    pub relation_edges: usize,
    pub episodic_edges: usize,
    pub categories: usize,
    pub category_edges: usize,
    pub hierarchy_generation: u64,
    /// Node count per layer, layer 0 (entities) first.
    pub layers: Vec<usize>,
}

pub struct MemoryStore {
    config: EngineConfig,
    next_id: AtomicU64,
    episodes: BTreeMap<NodeId, EpisodeRecord>,
    episodes_by_time: BTreeSet<(Timestamp, NodeId)>,
    entities: BTreeMap<NodeId, EntityRecord>,
    edges: BTreeMap<NodeId, RelationEdge>,
    edges_by_entity: HashMap<NodeId, BTreeSet<NodeId>>,
    episodic: BTreeSet<EpisodicEdge>,
    lexical: LexicalIndex,
    vectors: VectorIndex,
    hierarchy: RwLock<Arc<HierarchyGeneration>>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore").field("stats", &self.stats()).finish()
    }
}

impl MemoryStore {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lexical: LexicalIndex::new(config.bm25),
            vectors: VectorIndex::new(config.embedding_dim),
            config,
            next_id: AtomicU64::new(1),
            episodes: BTreeMap::new(),
            episodes_by_time: BTreeSet::new(),
            entities: BTreeMap::new(),
            edges: BTreeMap::new(),
            edges_by_entity: HashMap::new(),
            episodic: BTreeSet::new(),
            hierarchy: RwLock::new(Arc::new(HierarchyGeneration::default())),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.embedding_dim
    }

    /// Hands out a fresh id. Ids are never reused, even if the caller never
    /// stores anything under the id.
    pub fn allocate_id(&self) -> NodeId {
        NodeId(self.next_id.fetch_add(1, AtomicOrdering::SeqCst))
    }

    pub(crate) fn next_id_value(&self) -> u64 {
        self.next_id.load(AtomicOrdering::SeqCst)
    }

    fn reserve_through(&self, id: NodeId) {
        self.next_id.fetch_max(id.0 + 1, AtomicOrdering::SeqCst);
    }

    // ---------------------------------------------------------------------
    // lookups
    // ---------------------------------------------------------------------

    pub fn episode(&self, id: NodeId) -> Option<&EpisodeRecord> {
        self.episodes.get(&id)
    }

    pub fn entity(&self, id: NodeId) -> Option<&EntityRecord> {
        self.entities.get(&id)
    }

    pub fn edge(&self, id: NodeId) -> Option<&RelationEdge> {
        self.edges.get(&id)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn relation_edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values()
    }

    pub fn episodic_edges(&self) -> impl Iterator<Item = &EpisodicEdge> {
        self.episodic.iter()
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn kind_of(&self, id: NodeId) -> Option<NodeKind> {
        if self.episodes.contains_key(&id) {
            Some(NodeKind::Episode)
        } else if self.entities.contains_key(&id) {
            Some(NodeKind::Entity)
        } else if self.edges.contains_key(&id) {
            Some(NodeKind::Edge)
        } else if self.hierarchy().category(id).is_some() {
            Some(NodeKind::Category)
        } else {
            None
        }
    }

    /// First entity (lowest id) whose name matches case-insensitively.
    pub fn entity_by_name(&self, name: &str) -> Option<&EntityRecord> {
        let wanted = name.trim().to_lowercase();
        self.entities.values().find(|e| e.name.to_lowercase() == wanted)
    }

    pub fn lexical(&self) -> &LexicalIndex {
        &self.lexical
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.vectors
    }

    pub fn bm25_search(&self, query: &str, kind: TextKind, limit: usize) -> Vec<(NodeId, f64)> {
        self.lexical.bm25_search(query, kind, limit)
    }

    pub fn vector_search(&self, query: &Embedding, kind: VectorKind, limit: usize) -> Result<Vec<(NodeId, f64)>> {
        self.vectors.vector_search(query, kind, limit)
    }

    /// Up to `count` episodes strictly before `before`, newest first. Equal
    /// timestamps are ordered by descending id.
    pub fn recent_episodes(&self, before: Timestamp, count: usize) -> Vec<EpisodeRecord> {
        self.episodes_by_time
            .range(..(before, NodeId(0)))
            .rev()
            .take(count)
            .map(|(_, id)| self.episodes[id].clone())
            .collect()
    }

    /// Episodes linked to `entity` by episodic edges, ascending id.
    pub fn episodes_of(&self, entity: NodeId) -> Result<Vec<EpisodeRecord>> {
        if !self.entities.contains_key(&entity) {
            return Err(MemoryError::UnknownNode(entity));
        }
        let lo = EpisodicEdge { entity, episode: NodeId(0) };
        let hi = EpisodicEdge { entity, episode: NodeId(u64::MAX) };
        Ok(self
            .episodic
            .range(lo..=hi)
            .map(|e| self.episodes[&e.episode].clone())
            .collect())
    }

    /// Every relation edge incident to `entity`, each paired with the entity
    /// at the other end (the entity itself for a reflexive edge). Ascending
    /// edge id.
    pub fn edges_of(&self, entity: NodeId) -> Result<Vec<(RelationEdge, EntityRecord)>> {
        if !self.entities.contains_key(&entity) {
            return Err(MemoryError::UnknownNode(entity));
        }
        let Some(ids) = self.edges_by_entity.get(&entity) else {
            return Ok(Vec::new());
        };
        Ok(ids
            .iter()
            .map(|id| {
                let edge = &self.edges[id];
                let other = edge.opposite(entity).expect("adjacency lists only incident edges");
                (edge.clone(), self.entities[&other].clone())
            })
            .collect())
    }

    /// Layer 0 is every entity; layer ≥ 1 is the active generation's
    /// categories at that layer. Ascending id.
    pub fn nodes_at_layer(&self, layer: i64) -> Result<Vec<LayerNode>> {
        if layer < 0 {
            return Err(MemoryError::InvalidArgument(format!("negative layer {layer}")));
        }
        if layer == 0 {
            return Ok(self.entities.values().cloned().map(LayerNode::Entity).collect());
        }
        let h = self.hierarchy();
        let Ok(layer) = u32::try_from(layer) else {
            return Ok(Vec::new());
        };
        Ok(h.layer(layer)
            .iter()
            .map(|id| LayerNode::Category(h.category(*id).unwrap().clone()))
            .collect())
    }

    /// Display name of any node.
    pub fn node_name(&self, id: NodeId) -> Option<String> {
        if let Some(e) = self.entities.get(&id) {
            return Some(e.name.clone());
        }
        self.hierarchy().category(id).map(|c| c.name.clone())
    }

    pub fn stats(&self) -> StoreStats {
        let h = self.hierarchy();
        let mut layers = vec![self.entities.len()];
        layers.extend(h.layer_counts());
        StoreStats {
            episodes: self.episodes.len(),
            entities: self.entities.len(),
            relation_edges: self.edges.len(),
            episodic_edges: self.episodic.len(),
            categories: h.len(),
            category_edges: h.edge_count(),
            hierarchy_generation: h.generation(),
            layers,
        }
    }

    // ---------------------------------------------------------------------
    // writes
    // ---------------------------------------------------------------------

    /// Inserts or replaces one node. A category upsert publishes a new
    /// hierarchy generation containing the change.
    pub fn upsert_node(&mut self, record: NodeRecord) -> Result<NodeId> {
        match record {
            NodeRecord::Episode(ep) => {
                let id = ep.id;
                self.apply(WriteBatch {
                    episodes: vec![ep],
                    ..WriteBatch::default()
                })?;
                Ok(id)
            }
            NodeRecord::Entity(en) => {
                let id = en.id;
                self.apply(WriteBatch {
                    entities: vec![en],
                    ..WriteBatch::default()
                })?;
                Ok(id)
            }
            NodeRecord::Category(cat) => {
                let id = cat.id;
                let current = self.hierarchy();
                let mut cats: Vec<CategoryRecord> = current.categories().filter(|c| c.id != id).cloned().collect();
                let edges: Vec<CategoryEdge> = current.edges().copied().collect();
                if let Some(old) = current.category(id) {
                    if old.layer != cat.layer {
                        return Err(MemoryError::Invariant(vec![Violation::new(
                            format!("category {id}"),
                            "layer of an existing category cannot change",
                        )]));
                    }
                }
                cats.push(cat);
                self.swap_hierarchy(cats, edges)?;
                Ok(id)
            }
        }
    }

    pub fn upsert_edge(&mut self, edge: RelationEdge) -> Result<NodeId> {
        let id = edge.id;
        self.apply(WriteBatch {
            edges: vec![edge],
            ..WriteBatch::default()
        })?;
        Ok(id)
    }

    /// Validates the whole batch against the store plus the batch itself,
    /// then applies it. On error nothing is written.
    pub fn apply(&mut self, batch: WriteBatch) -> Result<()> {
        let violations = self.validate_batch(&batch);
        if !violations.is_empty() {
            return Err(MemoryError::Invariant(violations));
        }
        for ep in batch.episodes {
            self.put_episode(ep);
        }
        for en in batch.entities {
            self.put_entity(en);
        }
        for ed in batch.edges {
            self.put_edge(ed);
        }
        Ok(())
    }

    fn validate_batch(&self, batch: &WriteBatch) -> Vec<Violation> {
        let dim = self.config.embedding_dim;
        let mut out = Vec::new();
        let hierarchy = self.hierarchy();

        let batch_episodes: HashSet<NodeId> = batch.episodes.iter().map(|e| e.id).collect();
        let batch_entities: HashSet<NodeId> = batch.entities.iter().map(|e| e.id).collect();
        let batch_edges: HashSet<NodeId> = batch.edges.iter().map(|e| e.id).collect();
        if batch_episodes.len() != batch.episodes.len()
            || batch_entities.len() != batch.entities.len()
            || batch_edges.len() != batch.edges.len()
        {
            out.push(Violation::new("batch", "duplicate id within one batch"));
        }

        let clash = |id: NodeId, own: NodeKind| -> bool {
            let in_store = match own {
                NodeKind::Episode => self.entities.contains_key(&id) || self.edges.contains_key(&id),
                NodeKind::Entity => self.episodes.contains_key(&id) || self.edges.contains_key(&id),
                NodeKind::Edge => self.episodes.contains_key(&id) || self.entities.contains_key(&id),
                NodeKind::Category => true,
            };
            let in_batch = match own {
                NodeKind::Episode => batch_entities.contains(&id) || batch_edges.contains(&id),
                NodeKind::Entity => batch_episodes.contains(&id) || batch_edges.contains(&id),
                NodeKind::Edge => batch_episodes.contains(&id) || batch_entities.contains(&id),
                NodeKind::Category => true,
            };
            in_store || in_batch || hierarchy.category(id).is_some()
        };

        for ep in &batch.episodes {
            out.extend(ep.violations(dim));
            if clash(ep.id, NodeKind::Episode) {
                out.push(Violation::new(format!("episode {}", ep.id), "id already used by another node kind"));
            }
        }
        for en in &batch.entities {
            out.extend(en.violations(dim));
            if clash(en.id, NodeKind::Entity) {
                out.push(Violation::new(format!("entity {}", en.id), "id already used by another node kind"));
            }
            for ep in &en.episode_idx {
                if !self.episodes.contains_key(ep) && !batch_episodes.contains(ep) {
                    out.push(Violation::new(
                        format!("entity {}", en.id),
                        format!("episode_idx references unknown episode {ep}"),
                    ));
                }
            }
        }
        for ed in &batch.edges {
            out.extend(ed.violations(dim));
            if clash(ed.id, NodeKind::Edge) {
                out.push(Violation::new(format!("edge {}", ed.id), "id already used by another node kind"));
            }
            for end in [ed.source, ed.target] {
                if !self.entities.contains_key(&end) && !batch_entities.contains(&end) {
                    out.push(Violation::new(
                        format!("edge {}", ed.id),
                        format!("endpoint {end} is not a stored entity"),
                    ));
                }
            }
        }
        out
    }

    fn put_episode(&mut self, ep: EpisodeRecord) {
        self.reserve_through(ep.id);
        if let Some(old) = self.episodes.get(&ep.id) {
            self.episodes_by_time.remove(&(old.valid_at, old.id));
        }
        self.episodes_by_time.insert((ep.valid_at, ep.id));
        self.lexical.upsert(TextKind::EpisodeContent, ep.id, &ep.content);
        self.vectors
            .upsert(VectorKind::Episode, ep.id, &ep.episode_embedding)
            .expect("validated dimension");
        self.episodes.insert(ep.id, ep);
    }

    /// Lexical field for an entity: the name repeated `name_boost` times,
    /// then the summary.
    pub(crate) fn entity_lexical_tokens(&self, e: &EntityRecord) -> Vec<String> {
        let name = tokenize(&e.name);
        let mut tokens = Vec::with_capacity(name.len() * self.config.name_boost as usize);
        for _ in 0..self.config.name_boost {
            tokens.extend(name.iter().cloned());
        }
        tokens.extend(tokenize(&e.summary));
        tokens
    }

    fn put_entity(&mut self, en: EntityRecord) {
        self.reserve_through(en.id);
        let old_eps: BTreeSet<NodeId> = self
            .entities
            .get(&en.id)
            .map(|o| o.episode_idx.clone())
            .unwrap_or_default();
        for ep in old_eps.difference(&en.episode_idx) {
            self.episodic.remove(&EpisodicEdge { entity: en.id, episode: *ep });
        }
        for ep in &en.episode_idx {
            self.episodic.insert(EpisodicEdge { entity: en.id, episode: *ep });
        }
        let tokens = self.entity_lexical_tokens(&en);
        self.lexical.upsert_tokens(TextKind::EntityText, en.id, tokens);
        self.vectors
            .upsert(VectorKind::EntitySummary, en.id, &en.summary_embedding)
            .expect("validated dimension");
        self.vectors
            .upsert(VectorKind::EntityName, en.id, &en.name_embedding)
            .expect("validated dimension");
        self.entities.insert(en.id, en);
    }

    fn put_edge(&mut self, ed: RelationEdge) {
        self.reserve_through(ed.id);
        if let Some(old) = self.edges.get(&ed.id) {
            for end in [old.source, old.target] {
                if let Some(set) = self.edges_by_entity.get_mut(&end) {
                    set.remove(&old.id);
                }
            }
        }
        for end in [ed.source, ed.target] {
            self.edges_by_entity.entry(end).or_default().insert(ed.id);
        }
        self.lexical.upsert(TextKind::EdgeFact, ed.id, &ed.fact);
        self.vectors
            .upsert(VectorKind::EdgeFact, ed.id, &ed.fact_embedding)
            .expect("validated dimension");
        self.edges.insert(ed.id, ed);
    }

    // ---------------------------------------------------------------------
    // hierarchy
    // ---------------------------------------------------------------------

    /// The active hierarchy generation. Holding the returned `Arc` pins that
    /// generation regardless of later swaps.
    pub fn hierarchy(&self) -> Arc<HierarchyGeneration> {
        self.hierarchy.read().expect("hierarchy lock poisoned").clone()
    }

    pub fn has_hierarchy(&self) -> bool {
        !self.hierarchy().is_empty()
    }

    /// Atomically replaces the hierarchy. The new set is validated first; on
    /// any violation the swap is refused and the old generation stays active.
    /// Returns the generation that was replaced.
    pub fn swap_hierarchy(
        &self,
        categories: Vec<CategoryRecord>,
        edges: Vec<CategoryEdge>,
    ) -> Result<Arc<HierarchyGeneration>> {
        let violations = self.validate_hierarchy(&categories, &edges);
        if !violations.is_empty() {
            return Err(MemoryError::Invariant(violations));
        }
        for c in &categories {
            self.reserve_through(c.id);
        }
        let mut slot = self.hierarchy.write().expect("hierarchy lock poisoned");
        let next = HierarchyGeneration::new(slot.generation() + 1, categories, edges);
        Ok(std::mem::replace(&mut *slot, Arc::new(next)))
    }

    pub(crate) fn install_generation(&mut self, generation: HierarchyGeneration) {
        for c in generation.categories() {
            self.reserve_through(c.id);
        }
        *self.hierarchy.get_mut().expect("hierarchy lock poisoned") = Arc::new(generation);
    }

    pub(crate) fn validate_hierarchy(&self, categories: &[CategoryRecord], edges: &[CategoryEdge]) -> Vec<Violation> {
        let dim = self.config.embedding_dim;
        let mut out = Vec::new();
        let mut layer_of: HashMap<NodeId, u32> = HashMap::new();
        for c in categories {
            out.extend(c.violations(dim));
            if layer_of.insert(c.id, c.layer).is_some() {
                out.push(Violation::new(format!("category {}", c.id), "duplicate category id"));
            }
            if self.episodes.contains_key(&c.id) || self.entities.contains_key(&c.id) || self.edges.contains_key(&c.id)
            {
                out.push(Violation::new(format!("category {}", c.id), "id already used by a base-graph node"));
            }
        }
        for e in edges {
            let subject = format!("category edge {}->{}", e.parent, e.child);
            let Some(&parent_layer) = layer_of.get(&e.parent) else {
                out.push(Violation::new(subject, "parent is not a category in the new hierarchy"));
                continue;
            };
            let child_layer = if let Some(&l) = layer_of.get(&e.child) {
                l
            } else if self.entities.contains_key(&e.child) {
                0
            } else {
                out.push(Violation::new(subject, "dangling child id"));
                continue;
            };
            if parent_layer != child_layer + 1 {
                out.push(Violation::new(
                    subject,
                    format!("layer difference must be one (parent {parent_layer}, child {child_layer})"),
                ));
            }
        }
        out
    }

    // ---------------------------------------------------------------------
    // audit
    // ---------------------------------------------------------------------

    /// Full-store consistency scan: record invariants, referential integrity,
    /// episodic-edge lockstep, category layer differences, index consistency.
    pub fn audit(&self) -> Vec<Violation> {
        let dim = self.config.embedding_dim;
        let mut out = Vec::new();
        for ep in self.episodes.values() {
            out.extend(ep.violations(dim));
        }
        let mut derived = BTreeSet::new();
        for en in self.entities.values() {
            out.extend(en.violations(dim));
            for ep in &en.episode_idx {
                if !self.episodes.contains_key(ep) {
                    out.push(Violation::new(format!("entity {}", en.id), format!("unknown episode {ep}")));
                }
                derived.insert(EpisodicEdge { entity: en.id, episode: *ep });
            }
        }
        if derived != self.episodic {
            out.push(Violation::new("episodic edges", "not in lockstep with entity episode_idx"));
        }
        for ed in self.edges.values() {
            out.extend(ed.violations(dim));
            for end in [ed.source, ed.target] {
                if !self.entities.contains_key(&end) {
                    out.push(Violation::new(format!("edge {}", ed.id), format!("unknown endpoint {end}")));
                }
                if !self.edges_by_entity.get(&end).is_some_and(|s| s.contains(&ed.id)) {
                    out.push(Violation::new(format!("edge {}", ed.id), "missing from adjacency"));
                }
            }
        }
        let h = self.hierarchy();
        let cats: Vec<CategoryRecord> = h.categories().cloned().collect();
        let edges: Vec<CategoryEdge> = h.edges().copied().collect();
        out.extend(self.validate_hierarchy(&cats, &edges));
        for p in self.lexical.audit().into_iter().chain(self.vectors.audit()) {
            out.push(Violation::new("index", p));
        }
        let expected_docs = [
            (TextKind::EpisodeContent, self.episodes.len()),
            (TextKind::EntityText, self.entities.len()),
            (TextKind::EdgeFact, self.edges.len()),
        ];
        for (kind, n) in expected_docs {
            if self.lexical.doc_count(kind) != n {
                out.push(Violation::new("index", format!("{kind:?} holds {} docs, expected {n}", self.lexical.doc_count(kind))));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, HashEmbedder};

    fn store() -> (MemoryStore, HashEmbedder) {
        let cfg = EngineConfig {
            embedding_dim: 16,
            ..EngineConfig::default()
        };
        (MemoryStore::new(cfg).unwrap(), HashEmbedder::new(16))
    }

    fn episode(s: &MemoryStore, emb: &HashEmbedder, unix: i64, text: &str) -> EpisodeRecord {
        EpisodeRecord {
            id: s.allocate_id(),
            content: text.into(),
            valid_at: Timestamp::from_unix(unix).unwrap(),
            episode_embedding: emb.embed(text).unwrap(),
            source_session: "s1".into(),
        }
    }

    fn entity(s: &MemoryStore, emb: &HashEmbedder, name: &str, eps: &[NodeId]) -> EntityRecord {
        EntityRecord {
            id: s.allocate_id(),
            name: name.into(),
            summary: format!("{name} summary"),
            tag: vec![],
            episode_idx: eps.iter().copied().collect(),
            name_embedding: emb.embed(name).unwrap(),
            summary_embedding: emb.embed(&format!("{name} summary")).unwrap(),
            layer: 0,
        }
    }

    fn edge(s: &MemoryStore, emb: &HashEmbedder, a: NodeId, b: NodeId, fact: &str) -> RelationEdge {
        RelationEdge {
            id: s.allocate_id(),
            source: a,
            target: b,
            fact: fact.into(),
            fact_embedding: emb.embed(fact).unwrap(),
            valid_at: Timestamp::from_unix(0).unwrap(),
            invalid_at: None,
            reflexive: false,
        }
    }

    #[test]
    fn upsert_is_insert_then_update() {
        let (mut s, emb) = store();
        let mut e = entity(&s, &emb, "Detroit", &[]);
        let id = s.upsert_node(NodeRecord::Entity(e.clone())).unwrap();
        assert_eq!(s.entity_count(), 1);
        e.summary = "a city in Michigan".into();
        e.summary_embedding = emb.embed(&e.summary).unwrap();
        assert_eq!(s.upsert_node(NodeRecord::Entity(e)).unwrap(), id);
        assert_eq!(s.entity_count(), 1);
        assert_eq!(s.entity(id).unwrap().summary, "a city in Michigan");
        assert!(s.audit().is_empty());
    }

    #[test]
    fn dangling_episode_reference_is_rejected() {
        let (mut s, emb) = store();
        let e = entity(&s, &emb, "Detroit", &[NodeId(999)]);
        let err = s.upsert_node(NodeRecord::Entity(e)).unwrap_err();
        assert!(matches!(err, MemoryError::Invariant(_)));
        assert_eq!(s.entity_count(), 0);
    }

    #[test]
    fn thousand_entities_count() {
        let (mut s, emb) = store();
        for i in 0..1000 {
            let e = entity(&s, &emb, &format!("entity {i}"), &[]);
            s.upsert_node(NodeRecord::Entity(e)).unwrap();
        }
        assert_eq!(s.entity_count(), 1000);
        assert_eq!(s.nodes_at_layer(0).unwrap().len(), 1000);
    }

    #[test]
    fn recent_episodes_orders_newest_first() {
        let (mut s, emb) = store();
        let eps: Vec<EpisodeRecord> = (1..=3).map(|t| episode(&s, &emb, t, &format!("t{t}"))).collect();
        for e in &eps {
            s.upsert_node(NodeRecord::Episode(e.clone())).unwrap();
        }
        let got = s.recent_episodes(Timestamp::from_unix(3).unwrap(), 2);
        assert_eq!(got, vec![eps[1].clone(), eps[0].clone()]);
        let (empty, _) = store();
        assert!(empty.recent_episodes(Timestamp::from_unix(3).unwrap(), 2).is_empty());
    }

    #[test]
    fn episodes_of_follows_episodic_edges() {
        let (mut s, emb) = store();
        let e5 = episode(&s, &emb, 5, "five");
        let e9 = episode(&s, &emb, 9, "nine");
        let lone = entity(&s, &emb, "Lonely", &[]);
        let ent = entity(&s, &emb, "Dave", &[e5.id, e9.id]);
        s.apply(WriteBatch {
            episodes: vec![e5.clone(), e9.clone()],
            entities: vec![ent.clone(), lone.clone()],
            edges: vec![],
        })
        .unwrap();
        assert_eq!(s.episodes_of(ent.id).unwrap(), vec![e5, e9]);
        assert!(s.episodes_of(lone.id).unwrap().is_empty());
        assert!(matches!(s.episodes_of(NodeId(4242)), Err(MemoryError::UnknownNode(_))));
    }

    #[test]
    fn edges_of_pairs_opposite_endpoint() {
        let (mut s, emb) = store();
        let a = entity(&s, &emb, "A", &[]);
        let b = entity(&s, &emb, "B", &[]);
        let c = entity(&s, &emb, "C", &[]);
        let iso = entity(&s, &emb, "Iso", &[]);
        let ab = edge(&s, &emb, a.id, b.id, "A knows B");
        let ca = edge(&s, &emb, c.id, a.id, "C knows A");
        s.apply(WriteBatch {
            episodes: vec![],
            entities: vec![a.clone(), b.clone(), c.clone(), iso.clone()],
            edges: vec![ab.clone(), ca.clone()],
        })
        .unwrap();
        let got = s.edges_of(a.id).unwrap();
        assert_eq!(got, vec![(ab, b), (ca, c)]);
        assert!(s.edges_of(iso.id).unwrap().is_empty());
    }

    #[test]
    fn batch_with_dangling_edge_writes_nothing() {
        let (mut s, emb) = store();
        let a = entity(&s, &emb, "A", &[]);
        let ed = edge(&s, &emb, a.id, NodeId(777), "dangling");
        let ep = episode(&s, &emb, 1, "text");
        assert!(s
            .apply(WriteBatch {
                episodes: vec![ep],
                entities: vec![a],
                edges: vec![ed]
            })
            .is_err());
        assert_eq!(s.stats().episodes + s.stats().entities, 0);
    }

    #[test]
    fn nodes_at_layer_edges() {
        let (mut s, emb) = store();
        for i in 0..7 {
            let e = entity(&s, &emb, &format!("e{i}"), &[]);
            s.upsert_node(NodeRecord::Entity(e)).unwrap();
        }
        assert_eq!(s.nodes_at_layer(0).unwrap().len(), 7);
        assert!(s.nodes_at_layer(1).unwrap().is_empty());
        assert!(s.nodes_at_layer(99).unwrap().is_empty());
        assert!(matches!(s.nodes_at_layer(-1), Err(MemoryError::InvalidArgument(_))));
    }

    fn category(s: &MemoryStore, emb: &HashEmbedder, name: &str, layer: u32) -> CategoryRecord {
        CategoryRecord {
            id: s.allocate_id(),
            name: name.into(),
            summary: name.into(),
            tag: vec![],
            episode_idx: BTreeSet::new(),
            name_embedding: emb.embed(name).unwrap(),
            summary_embedding: emb.embed(name).unwrap(),
            layer,
        }
    }

    #[test]
    fn swap_refuses_dangling_child_and_keeps_old() {
        let (mut s, emb) = store();
        let e = entity(&s, &emb, "Detroit", &[]);
        s.upsert_node(NodeRecord::Entity(e.clone())).unwrap();
        let c = category(&s, &emb, "Cities", 1);
        s.swap_hierarchy(vec![c.clone()], vec![CategoryEdge { parent: c.id, child: e.id }])
            .unwrap();
        let gen = s.hierarchy().generation();

        let c2 = category(&s, &emb, "Places", 1);
        let err = s
            .swap_hierarchy(vec![c2.clone()], vec![CategoryEdge { parent: c2.id, child: NodeId(5555) }])
            .unwrap_err();
        assert!(matches!(err, MemoryError::Invariant(_)));
        assert_eq!(s.hierarchy().generation(), gen);
        assert_eq!(s.hierarchy().category(c.id).unwrap().name, "Cities");
    }

    #[test]
    fn swap_refuses_layer_skip() {
        let (mut s, emb) = store();
        let e = entity(&s, &emb, "Detroit", &[]);
        s.upsert_node(NodeRecord::Entity(e.clone())).unwrap();
        let c = category(&s, &emb, "Geography", 2);
        assert!(s
            .swap_hierarchy(vec![c.clone()], vec![CategoryEdge { parent: c.id, child: e.id }])
            .is_err());
    }

    #[test]
    fn empty_swap_clears_hierarchy() {
        let (mut s, emb) = store();
        let e = entity(&s, &emb, "Detroit", &[]);
        s.upsert_node(NodeRecord::Entity(e.clone())).unwrap();
        let c = category(&s, &emb, "Cities", 1);
        s.swap_hierarchy(vec![c.clone()], vec![CategoryEdge { parent: c.id, child: e.id }])
            .unwrap();
        let previous = s.swap_hierarchy(vec![], vec![]).unwrap();
        assert_eq!(previous.len(), 1);
        assert!(!s.has_hierarchy());
    }

    #[test]
    fn category_upsert_publishes_new_generation() {
        let (mut s, emb) = store();
        let e = entity(&s, &emb, "Detroit", &[]);
        s.upsert_node(NodeRecord::Entity(e.clone())).unwrap();
        let mut c = category(&s, &emb, "Cities", 1);
        s.swap_hierarchy(vec![c.clone()], vec![CategoryEdge { parent: c.id, child: e.id }])
            .unwrap();
        c.summary = "Cities visited".into();
        s.upsert_node(NodeRecord::Category(c.clone())).unwrap();
        let h = s.hierarchy();
        assert_eq!(h.generation(), 2);
        assert_eq!(h.category(c.id).unwrap().summary, "Cities visited");
        assert_eq!(h.children(c.id), &[e.id]);
        c.name = "Food and Drinks".into();
        assert!(s.upsert_node(NodeRecord::Category(c)).is_err());
    }
}
