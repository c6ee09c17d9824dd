//! Query-time retrieval over the base graph and the hierarchy.
//!
//! System-1 runs BM25 and cosine search per item kind and fuses the two
//! rankings with RRF. System-2 walks the hierarchy top-down, letting the
//! oracle pick relevant nodes layer by layer, and gathers everything attached
//! to the entities it reaches. The union of both is re-ranked per kind and cut
//! to the budget.

mod context;
pub mod fusion;
mod rerank;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use context::assemble_context;
pub use fusion::{rrf_fuse, FusedItem};
pub use rerank::{LexicalReranker, RemoteReranker, Reranker};

use crate::embed::Embedder;
use crate::error::{MemoryError, Result};
use crate::index::{TextKind, VectorKind};
use crate::model::{CategoryRecord, EntityRecord, EpisodeRecord, NodeId, RelationEdge, Timestamp};
use crate::oracle::{ConceptOracle, OfferedNode, TokenUsage, INSUFFICIENT_MEMORY};
use crate::store::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemKind {
    Episode,
    Entity,
    Category,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Route {
    #[serde(rename = "system1-lexical")]
    Lexical,
    #[serde(rename = "system1-vector")]
    Vector,
    #[serde(rename = "system2")]
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedItem {
    pub kind: ItemKind,
    pub id: NodeId,
    pub display_text: String,
    pub score: f64,
    pub route: BTreeSet<Route>,
    /// 1-based rank in each System-1 source list that held the item.
    pub ranks: BTreeMap<Route, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
}

impl RankedItem {
    pub fn new(kind: ItemKind, id: NodeId, display_text: String, route: Route) -> Self {
        Self {
            kind,
            id,
            display_text,
            score: 0.0,
            route: [route].into_iter().collect(),
            ranks: BTreeMap::new(),
            layer: None,
            timestamp: None,
        }
    }

    pub fn episode(e: &EpisodeRecord, route: Route) -> Self {
        let mut it = Self::new(ItemKind::Episode, e.id, e.content.clone(), route);
        it.timestamp = Some(e.valid_at);
        it
    }

    pub fn entity(e: &EntityRecord, route: Route) -> Self {
        let mut it = Self::new(ItemKind::Entity, e.id, e.display_text(), route);
        it.layer = Some(0);
        it
    }

    pub fn category(c: &CategoryRecord, route: Route) -> Self {
        let mut it = Self::new(ItemKind::Category, c.id, c.display_text(), route);
        it.layer = Some(c.layer);
        it
    }

    pub fn edge(e: &RelationEdge, route: Route) -> Self {
        Self::new(ItemKind::Edge, e.id, e.display_text(), route)
    }

    fn absorb(&mut self, other: RankedItem) {
        self.route.extend(other.route);
        self.ranks.extend(other.ranks);
    }
}

/// `k` episodes; `2k` entities (categories included) and `2k` edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SearchBudget {
    k: usize,
}

impl SearchBudget {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(MemoryError::InvalidArgument("search budget k must be positive".into()));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entity_edge_limit(&self) -> usize {
        2 * self.k
    }
}

/// Per-kind lists. `entities` holds entities and categories together.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Evidence {
    pub episodes: Vec<RankedItem>,
    pub entities: Vec<RankedItem>,
    pub edges: Vec<RankedItem>,
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty() && self.entities.is_empty() && self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.episodes.len() + self.entities.len() + self.edges.len()
    }

    pub fn items(&self) -> impl Iterator<Item = &RankedItem> {
        self.episodes.iter().chain(&self.entities).chain(&self.edges)
    }

    fn ids(&self) -> TraceLists {
        let ids = |v: &[RankedItem]| v.iter().map(|i| i.id).collect();
        TraceLists {
            episodes: ids(&self.episodes),
            entities: ids(&self.entities),
            edges: ids(&self.edges),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    System1,
    System2,
    #[default]
    Combined,
}

impl std::str::FromStr for RetrievalMode {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" | "system1" => Ok(Self::System1),
            "s2" | "system2" => Ok(Self::System2),
            "combined" | "both" => Ok(Self::Combined),
            other => Err(MemoryError::InvalidArgument(format!(
                "unknown retrieval mode {other:?} (expected s1, s2 or combined)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TraceLists {
    pub episodes: Vec<NodeId>,
    pub entities: Vec<NodeId>,
    pub edges: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectionStep {
    pub layer: u32,
    pub offered: usize,
    pub selected: Vec<String>,
    /// Selected with `get_all_children`; their subtrees were taken whole.
    pub expanded: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OracleCalls {
    pub selection: usize,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalTrace {
    pub query: String,
    pub mode: RetrievalMode,
    pub k: usize,
    pub hierarchy_generation: u64,
    pub system1: Option<TraceLists>,
    pub system2: Option<TraceLists>,
    pub selection_steps: Vec<SelectionStep>,
    #[serde(rename = "final")]
    pub final_lists: TraceLists,
    pub oracle_calls: OracleCalls,
    pub token_usage: TokenUsage,
    pub warnings: Vec<String>,
}

impl RetrievalTrace {
    fn new(query: &str, mode: RetrievalMode, budget: SearchBudget, generation: u64) -> Self {
        Self {
            query: query.to_string(),
            mode,
            k: budget.k(),
            hierarchy_generation: generation,
            system1: None,
            system2: None,
            selection_steps: Vec::new(),
            final_lists: TraceLists::default(),
            oracle_calls: OracleCalls::default(),
            token_usage: TokenUsage::default(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryAnswer {
    pub answer: String,
    pub evidence: Evidence,
    pub context: String,
    pub trace: RetrievalTrace,
}

/// A failed query, with whatever retrieval had done before the failure.
#[derive(Debug)]
pub struct QueryFailure {
    pub error: MemoryError,
    pub trace: RetrievalTrace,
}

pub struct Retriever<'a> {
    store: &'a MemoryStore,
    oracle: &'a dyn ConceptOracle,
    embedder: &'a dyn Embedder,
    reranker: &'a dyn Reranker,
}

impl<'a> Retriever<'a> {
    pub fn new(
        store: &'a MemoryStore,
        oracle: &'a dyn ConceptOracle,
        embedder: &'a dyn Embedder,
        reranker: &'a dyn Reranker,
    ) -> Self {
        Self {
            store,
            oracle,
            embedder,
            reranker,
        }
    }

    /// System-1: per kind, BM25 and cosine lists at `depth_factor ×` the
    /// kind's budget, RRF-fused and cut to the budget.
    pub fn similarity_search(&self, query: &str, budget: SearchBudget) -> Result<Evidence> {
        if query.trim().is_empty() {
            return Err(MemoryError::InvalidArgument("query is empty".into()));
        }
        let store = self.store;
        let cfg = store.config();
        let qv = self.embedder.embed(query)?;
        let fuse = |text: TextKind, vector: VectorKind, limit: usize| -> Result<Vec<FusedItem>> {
            let depth = limit * cfg.candidate_depth_factor.max(1);
            let lex: Vec<NodeId> = store.bm25_search(query, text, depth).into_iter().map(|(id, _)| id).collect();
            let vec: Vec<NodeId> = store
                .vector_search(&qv, vector, depth)?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let mut fused = rrf_fuse(&[lex, vec], cfg.rrf_c);
            fused.truncate(limit);
            Ok(fused)
        };
        let finish = |mut it: RankedItem, f: &FusedItem| {
            it.route.clear();
            for (route, rank) in [Route::Lexical, Route::Vector].into_iter().zip(&f.ranks) {
                if let Some(r) = rank {
                    it.route.insert(route);
                    it.ranks.insert(route, *r);
                }
            }
            it.score = f.score;
            it
        };
        let mut ev = Evidence::default();
        for f in fuse(TextKind::EpisodeContent, VectorKind::Episode, budget.k())? {
            let rec = store.episode(f.id).expect("indexed episode exists");
            ev.episodes.push(finish(RankedItem::episode(rec, Route::Lexical), &f));
        }
        for f in fuse(TextKind::EntityText, VectorKind::EntitySummary, budget.entity_edge_limit())? {
            let rec = store.entity(f.id).expect("indexed entity exists");
            ev.entities.push(finish(RankedItem::entity(rec, Route::Lexical), &f));
        }
        for f in fuse(TextKind::EdgeFact, VectorKind::EdgeFact, budget.entity_edge_limit())? {
            let rec = store.edge(f.id).expect("indexed edge exists");
            ev.edges.push(finish(RankedItem::edge(rec, Route::Lexical), &f));
        }
        Ok(ev)
    }

    /// System-2: top-down selection over the active hierarchy. Returns an
    /// unordered set (listed in id order per kind). Empty when there is no
    /// hierarchy or nothing is selected at the top.
    pub fn global_selection(&self, query: &str, trace: &mut RetrievalTrace) -> Result<Evidence> {
        let store = self.store;
        let h = store.hierarchy();
        if h.is_empty() {
            return Ok(Evidence::default());
        }
        let mut categories: BTreeSet<NodeId> = BTreeSet::new();
        let mut entities: BTreeSet<NodeId> = BTreeSet::new();
        let mut layer = h.top_layer();
        let mut frontier: Vec<NodeId> = h.layer(layer).to_vec();
        while !frontier.is_empty() {
            let offered: Vec<OfferedNode> = frontier
                .iter()
                .map(|&id| match h.category(id) {
                    Some(c) => OfferedNode {
                        id,
                        name: c.name.clone(),
                        tag: c.tag.clone(),
                        layer: c.layer,
                    },
                    None => {
                        let e = store.entity(id).expect("hierarchy child is a stored entity");
                        OfferedNode {
                            id,
                            name: e.name.clone(),
                            tag: e.tag.clone(),
                            layer: 0,
                        }
                    }
                })
                .collect();
            let resp = self.oracle.select_nodes(query, &offered)?;
            trace.oracle_calls.selection += 1;
            trace.token_usage.add(resp.usage);
            trace.warnings.extend(resp.warnings);
            let mut step = SelectionStep {
                layer,
                offered: offered.len(),
                selected: Vec::new(),
                expanded: Vec::new(),
            };
            let mut next: BTreeSet<NodeId> = BTreeSet::new();
            for s in resp.payload.selected {
                step.selected.push(s.name.clone());
                if layer == 0 {
                    entities.insert(s.id);
                    continue;
                }
                categories.insert(s.id);
                if s.get_all_children {
                    step.expanded.push(s.name);
                    for d in h.descendants(s.id) {
                        if h.category(d).is_some() {
                            categories.insert(d);
                        } else {
                            entities.insert(d);
                        }
                    }
                } else {
                    next.extend(h.children(s.id).iter().copied());
                }
            }
            trace.selection_steps.push(step);
            frontier = next
                .into_iter()
                .filter(|id| !categories.contains(id) && !entities.contains(id))
                .collect();
            layer = layer.saturating_sub(1);
        }

        let mut episodes: BTreeMap<NodeId, RankedItem> = BTreeMap::new();
        let mut ents: BTreeMap<NodeId, RankedItem> = BTreeMap::new();
        let mut edges: BTreeMap<NodeId, RankedItem> = BTreeMap::new();
        for &id in &entities {
            let e = store.entity(id).ok_or(MemoryError::UnknownNode(id))?;
            ents.insert(id, RankedItem::entity(e, Route::Global));
            for ep in store.episodes_of(id)? {
                episodes.entry(ep.id).or_insert_with(|| RankedItem::episode(&ep, Route::Global));
            }
            for (edge, other) in store.edges_of(id)? {
                edges.entry(edge.id).or_insert_with(|| RankedItem::edge(&edge, Route::Global));
                ents.entry(other.id).or_insert_with(|| RankedItem::entity(&other, Route::Global));
            }
        }
        let mut ev = Evidence {
            episodes: episodes.into_values().collect(),
            entities: ents.into_values().collect(),
            edges: edges.into_values().collect(),
        };
        for &id in &categories {
            let c = h.category(id).ok_or(MemoryError::UnknownNode(id))?;
            ev.entities.push(RankedItem::category(c, Route::Global));
        }
        ev.entities.sort_by_key(|i| i.id);
        Ok(ev)
    }

    /// Runs the routes selected by `mode`, unions their items by id,
    /// re-ranks each kind and cuts to the budget. Combined mode without a
    /// hierarchy degrades to System-1; System-2 mode without one is an error.
    pub fn combined_search(&self, query: &str, budget: SearchBudget, mode: RetrievalMode) -> Result<(Evidence, RetrievalTrace)> {
        let mut trace = RetrievalTrace::new(query, mode, budget, self.store.hierarchy().generation());
        let ev = self.search_into(query, budget, mode, &mut trace)?;
        Ok((ev, trace))
    }

    fn search_into(&self, query: &str, budget: SearchBudget, mode: RetrievalMode, trace: &mut RetrievalTrace) -> Result<Evidence> {
        if query.trim().is_empty() {
            return Err(MemoryError::InvalidArgument("query is empty".into()));
        }
        let has_hierarchy = self.store.has_hierarchy();
        if mode == RetrievalMode::System2 && !has_hierarchy {
            return Err(MemoryError::HierarchyAbsent);
        }
        let s1 = match mode {
            RetrievalMode::System2 => Evidence::default(),
            _ => {
                let ev = self.similarity_search(query, budget)?;
                trace.system1 = Some(ev.ids());
                ev
            }
        };
        let s2 = match mode {
            RetrievalMode::System1 => Evidence::default(),
            _ if !has_hierarchy => {
                trace.warnings.push("no hierarchy built; System-2 skipped".into());
                Evidence::default()
            }
            _ => {
                let ev = self.global_selection(query, trace)?;
                trace.system2 = Some(ev.ids());
                ev
            }
        };

        let mut out = Evidence::default();
        for (dst, a, b, limit) in [
            (&mut out.episodes, s1.episodes, s2.episodes, budget.k()),
            (&mut out.entities, s1.entities, s2.entities, budget.entity_edge_limit()),
            (&mut out.edges, s1.edges, s2.edges, budget.entity_edge_limit()),
        ] {
            let mut pool: BTreeMap<NodeId, RankedItem> = BTreeMap::new();
            for it in a.into_iter().chain(b) {
                match pool.get_mut(&it.id) {
                    Some(existing) => existing.absorb(it),
                    None => {
                        pool.insert(it.id, it);
                    }
                }
            }
            let (mut ranked, warnings) = self.reranker.rerank(query, pool.into_values().collect());
            trace.warnings.extend(warnings);
            ranked.truncate(limit);
            *dst = ranked;
        }
        trace.final_lists = out.ids();
        Ok(out)
    }

    /// Retrieval, context assembly and the answer call. With no evidence at
    /// all the sentinel answer is returned without calling the oracle.
    pub fn answer_query(
        &self,
        query: &str,
        budget: SearchBudget,
        mode: RetrievalMode,
    ) -> std::result::Result<QueryAnswer, Box<QueryFailure>> {
        let mut trace = RetrievalTrace::new(query, mode, budget, self.store.hierarchy().generation());
        let evidence = match self.search_into(query, budget, mode, &mut trace) {
            Ok(ev) => ev,
            Err(error) => return Err(Box::new(QueryFailure { error, trace })),
        };
        let context = assemble_context(&evidence);
        if evidence.is_empty() {
            return Ok(QueryAnswer {
                answer: INSUFFICIENT_MEMORY.to_string(),
                evidence,
                context,
                trace,
            });
        }
        trace.oracle_calls.answer += 1;
        match self.oracle.answer(query, &context) {
            Ok(resp) => {
                trace.token_usage.add(resp.usage);
                trace.warnings.extend(resp.warnings);
                Ok(QueryAnswer {
                    answer: resp.payload,
                    evidence,
                    context,
                    trace,
                })
            }
            Err(error) => Err(Box::new(QueryFailure { error, trace })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::embed::HashEmbedder;
    use crate::ingest::{ingest, Message};
    use crate::oracle::{LexiconTerm, ScriptedFixture, ScriptedOracle, SelectionRule, TaxonomyEntry};

    const DIM: usize = 32;

    fn term(name: &str) -> LexiconTerm {
        LexiconTerm {
            name: name.into(),
            ..LexiconTerm::default()
        }
    }

    fn fixture() -> ScriptedFixture {
        ScriptedFixture {
            lexicon: ["Dave", "Detroit", "Boston", "pizza"].into_iter().map(term).collect(),
            taxonomy: vec![
                TaxonomyEntry {
                    name: "Cities".into(),
                    children: vec!["Detroit".into(), "Boston".into()],
                    tags: vec![],
                    layer: Some(1),
                    retry: false,
                },
                TaxonomyEntry {
                    name: "Misc".into(),
                    children: vec!["Dave".into(), "pizza".into()],
                    tags: vec![],
                    layer: Some(1),
                    retry: false,
                },
            ],
            selection: vec![SelectionRule {
                keywords: vec!["cities".into()],
                select: vec!["Cities".into()],
                all_children: vec!["Cities".into()],
            }],
            ..ScriptedFixture::default()
        }
    }

    fn populated() -> (MemoryStore, ScriptedOracle, HashEmbedder) {
        let mut store = MemoryStore::new(EngineConfig {
            embedding_dim: DIM,
            compression_ratio: 2,
            ..EngineConfig::default()
        })
        .unwrap();
        let oracle = ScriptedOracle::new(fixture());
        let emb = HashEmbedder::new(DIM);
        let msgs: Vec<Message> = [
            "Dave drove to Detroit.",
            "Dave ate pizza.",
            "Dave flew to Boston last spring.",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| Message {
            speaker: "Dave".into(),
            text: t.to_string(),
            timestamp: Timestamp::from_unix(1_000 + i as i64).unwrap(),
            session_id: "s1".into(),
        })
        .collect();
        ingest(&mut store, &oracle, &emb, &msgs).into_result().unwrap();
        (store, oracle, emb)
    }

    #[test]
    fn lexical_and_semantic_match_ranks_first() {
        let (store, oracle, emb) = populated();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let ev = r.similarity_search("pizza", SearchBudget::new(10).unwrap()).unwrap();
        assert!(ev.episodes[0].display_text.contains("pizza"));
        assert!(ev.episodes[0].route.contains(&Route::Lexical));
    }

    #[test]
    fn system2_without_hierarchy_is_refused_and_combined_degrades() {
        let (store, oracle, emb) = populated();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let b = SearchBudget::new(10).unwrap();
        assert!(matches!(
            r.combined_search("cities", b, RetrievalMode::System2),
            Err(MemoryError::HierarchyAbsent)
        ));
        let (combined, _) = r.combined_search("Dave pizza", b, RetrievalMode::Combined).unwrap();
        let (s1, _) = r.combined_search("Dave pizza", b, RetrievalMode::System1).unwrap();
        assert_eq!(combined, s1);
    }

    #[test]
    fn global_selection_expands_subtree_and_collects_attachments() {
        let (store, oracle, emb) = populated();
        crate::hierarchy::build(&store, &oracle, &emb, (&store.config().clone()).into()).unwrap();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let mut trace = RetrievalTrace::new("which cities", RetrievalMode::System2, SearchBudget::new(10).unwrap(), 1);
        let ev = r.global_selection("which cities", &mut trace).unwrap();
        let names: BTreeSet<String> = ev
            .entities
            .iter()
            .map(|i| i.display_text.split(':').next().unwrap().to_string())
            .collect();
        assert!(names.contains("Detroit") && names.contains("Boston") && names.contains("Cities"));
        // Dave comes in as the other endpoint of the city edges
        assert!(names.contains("Dave"));
        assert_eq!(ev.episodes.len(), 2);
        // one call at the top layer; the expansion needs no more
        assert_eq!(trace.oracle_calls.selection, 1);
        assert!(ev.items().all(|i| i.route == [Route::Global].into_iter().collect()));
    }

    #[test]
    fn nothing_selected_gives_empty_set() {
        let (store, oracle, emb) = populated();
        crate::hierarchy::build(&store, &oracle, &emb, (&store.config().clone()).into()).unwrap();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let mut trace = RetrievalTrace::new("weather", RetrievalMode::System2, SearchBudget::new(10).unwrap(), 1);
        assert!(r.global_selection("weather", &mut trace).unwrap().is_empty());
        assert_eq!(trace.oracle_calls.selection, 1);
    }

    #[test]
    fn items_from_both_routes_appear_once() {
        let (store, oracle, emb) = populated();
        crate::hierarchy::build(&store, &oracle, &emb, (&store.config().clone()).into()).unwrap();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let (ev, _) = r
            .combined_search("which cities Detroit", SearchBudget::new(10).unwrap(), RetrievalMode::Combined)
            .unwrap();
        let detroit: Vec<&RankedItem> = ev.entities.iter().filter(|i| i.display_text.starts_with("Detroit:")).collect();
        assert_eq!(detroit.len(), 1);
        assert!(detroit[0].route.contains(&Route::Global));
        assert!(detroit[0].route.contains(&Route::Lexical));
    }

    #[test]
    fn budget_truncates_each_kind() {
        let (store, oracle, emb) = populated();
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let (ev, _) = r.combined_search("Dave", SearchBudget::new(1).unwrap(), RetrievalMode::Combined).unwrap();
        assert_eq!(ev.episodes.len(), 1);
        assert!(ev.entities.len() <= 2 && ev.edges.len() <= 2);
    }

    #[test]
    fn empty_store_answers_with_sentinel() {
        let store = MemoryStore::new(EngineConfig {
            embedding_dim: DIM,
            ..EngineConfig::default()
        })
        .unwrap();
        let oracle = ScriptedOracle::new(ScriptedFixture::default());
        let emb = HashEmbedder::new(DIM);
        let r = Retriever::new(&store, &oracle, &emb, &LexicalReranker);
        let a = r
            .answer_query("anything", SearchBudget::new(10).unwrap(), RetrievalMode::Combined)
            .unwrap();
        assert_eq!(a.answer, INSUFFICIENT_MEMORY);
        assert_eq!(a.trace.oracle_calls.answer, 0);
    }
}
