//! Base-graph ingestion: messages → episodes → entities → relation edges.
//!
//! Each episode runs the full pipeline against a staged [`WriteBatch`] that is
//! committed in one `apply`, so a failure mid-episode leaves no trace and
//! everything committed before it stays.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ChunkingPolicy;
use crate::embed::Embedder;
use crate::error::{MemoryError, Result};
use crate::index::{TextKind, VectorKind};
use crate::model::{merge_entity_attributes, EntityRecord, EpisodeRecord, NodeId, RelationEdge, Timestamp};
use crate::oracle::{ConceptOracle, DedupVerdict, EdgeDraft, OracleResponse, TokenUsage};
use crate::retrieval::rrf_fuse;
use crate::store::{MemoryStore, WriteBatch};

/// One conversation message, as read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub speaker: String,
    pub text: String,
    pub timestamp: Timestamp,
    pub session_id: String,
}

/// Episode text and timing before it gets an id and embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeDraft {
    pub content: String,
    pub valid_at: Timestamp,
    pub session: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub episodes_created: usize,
    pub entities_created: usize,
    pub entities_merged: usize,
    pub edges_created: usize,
    pub edges_merged: usize,
    pub oracle_calls: usize,
    pub token_usage: TokenUsage,
    pub warnings: Vec<String>,
}

/// Result of an ingestion run. When `error` is set the run stopped at an
/// episode boundary; `report` covers the episodes committed before it.
#[derive(Debug)]
pub struct IngestOutcome {
    pub report: IngestReport,
    pub error: Option<MemoryError>,
}

impl IngestOutcome {
    pub fn into_result(self) -> Result<IngestReport> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.report),
        }
    }
}

/// Cuts one session's messages into episode texts. Per-turn gives one episode
/// per message, prefixed `speaker: `; per-exchange joins consecutive pairs of
/// turns with a newline and stamps the pair with its first timestamp.
pub fn episode_chunking(session: &[Message], policy: ChunkingPolicy) -> Vec<EpisodeDraft> {
    let turn = |m: &Message| format!("{}: {}", m.speaker, m.text.trim());
    let turns: Vec<&Message> = session.iter().filter(|m| !m.text.trim().is_empty()).collect();
    match policy {
        ChunkingPolicy::PerTurn => turns
            .iter()
            .map(|m| EpisodeDraft {
                content: turn(m),
                valid_at: m.timestamp,
                session: m.session_id.clone(),
            })
            .collect(),
        ChunkingPolicy::PerExchange => turns
            .chunks(2)
            .map(|pair| EpisodeDraft {
                content: pair.iter().map(|m| turn(m)).collect::<Vec<_>>().join("\n"),
                valid_at: pair[0].timestamp,
                session: pair[0].session_id.clone(),
            })
            .collect(),
    }
}

/// Groups messages by session (order of first appearance) and checks that
/// timestamps never decrease within a session.
pub fn group_sessions(messages: &[Message]) -> Result<Vec<Vec<Message>>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Message>> = BTreeMap::new();
    for m in messages {
        let g = groups.entry(m.session_id.clone()).or_insert_with(|| {
            order.push(m.session_id.clone());
            Vec::new()
        });
        if let Some(prev) = g.last() {
            if m.timestamp < prev.timestamp {
                return Err(MemoryError::Data(format!(
                    "session {:?}: timestamp {} precedes {}",
                    m.session_id, m.timestamp, prev.timestamp
                )));
            }
        }
        g.push(m.clone());
    }
    Ok(order.into_iter().map(|s| groups.remove(&s).unwrap()).collect())
}

pub struct Ingestor<'a> {
    store: &'a mut MemoryStore,
    oracle: &'a dyn ConceptOracle,
    embedder: &'a dyn Embedder,
    pool: rayon::ThreadPool,
}

/// Per-episode accounting, folded into the report only on commit.
#[derive(Default)]
struct Tally {
    entities_created: usize,
    entities_merged: usize,
    edges_created: usize,
    edges_merged: usize,
    oracle_calls: usize,
    usage: TokenUsage,
    warnings: Vec<String>,
}

impl Tally {
    fn take<T>(&mut self, r: OracleResponse<T>, episode: NodeId) -> T {
        self.oracle_calls += 1;
        self.usage.add(r.usage);
        self.warnings
            .extend(r.warnings.into_iter().map(|w| format!("episode {episode}: {w}")));
        r.payload
    }
}

/// Where a name landed during entity resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Existing(NodeId),
    Staged(usize),
}

impl<'a> Ingestor<'a> {
    pub fn new(store: &'a mut MemoryStore, oracle: &'a dyn ConceptOracle, embedder: &'a dyn Embedder) -> Result<Self> {
        if embedder.dimension() != store.dimension() {
            return Err(MemoryError::Config(format!(
                "embedder dimension {} does not match store dimension {}",
                embedder.dimension(),
                store.dimension()
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(store.config().parallelism)
            .build()
            .map_err(|e| MemoryError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            store,
            oracle,
            embedder,
            pool,
        })
    }

    /// Ingests `messages`. Input validation failures reject the whole batch
    /// before anything is written; oracle failures stop at an episode
    /// boundary.
    pub fn ingest(&mut self, messages: &[Message]) -> IngestOutcome {
        let mut report = IngestReport::default();
        let sessions = match group_sessions(messages) {
            Ok(s) => s,
            Err(e) => return IngestOutcome { report, error: Some(e) },
        };
        let policy = self.store.config().chunking;
        for session in sessions {
            for draft in episode_chunking(&session, policy) {
                if let Err(e) = self.ingest_episode(draft, &mut report) {
                    log::error!("ingestion stopped: {e}");
                    return IngestOutcome { report, error: Some(e) };
                }
            }
        }
        IngestOutcome { report, error: None }
    }

    fn ingest_episode(&mut self, draft: EpisodeDraft, report: &mut IngestReport) -> Result<()> {
        let mut tally = Tally::default();
        let batch = self.stage_episode(draft, &mut tally)?;
        self.store.apply(batch)?;
        report.episodes_created += 1;
        report.entities_created += tally.entities_created;
        report.entities_merged += tally.entities_merged;
        report.edges_created += tally.edges_created;
        report.edges_merged += tally.edges_merged;
        report.oracle_calls += tally.oracle_calls;
        report.token_usage.add(tally.usage);
        report.warnings.extend(tally.warnings);
        Ok(())
    }

    fn stage_episode(&self, draft: EpisodeDraft, tally: &mut Tally) -> Result<WriteBatch> {
        let store = &*self.store;
        let cfg = store.config();
        let episode = EpisodeRecord {
            id: store.allocate_id(),
            episode_embedding: self.embedder.embed(&draft.content)?,
            content: draft.content,
            valid_at: draft.valid_at,
            source_session: draft.session,
        };
        let ep = episode.id;
        let recent = store.recent_episodes(episode.valid_at, cfg.recent_window);

        // names
        let mut names = tally.take(self.oracle.extract_entity_names(&episode, &recent)?, ep);
        let missed = tally.take(self.oracle.reflect_missing_names(&episode, &recent, &names)?, ep);
        names.extend(missed);

        // resolution, sequential so later names can match entities staged by earlier ones
        let mut staged_names: Vec<String> = Vec::new();
        let mut targets: Vec<Target> = Vec::new();
        for name in &names {
            let target = self.resolve_name(name, &staged_names, tally, ep)?;
            if let Target::Staged(i) = target {
                if i == staged_names.len() {
                    staged_names.push(name.clone());
                }
            }
            if !targets.contains(&target) {
                targets.push(target);
            }
        }

        // attributes, bounded-parallel
        let attr_names: Vec<String> = targets
            .iter()
            .map(|t| match t {
                Target::Existing(id) => store.entity(*id).expect("resolved against store").name.clone(),
                Target::Staged(i) => staged_names[*i].clone(),
            })
            .collect();
        let oracle = self.oracle;
        let results: Vec<Result<OracleResponse<crate::oracle::EntityAttributes>>> = self.pool.install(|| {
            attr_names
                .par_iter()
                .map(|n| oracle.extract_entity_attributes(n, &episode, &recent))
                .collect()
        });
        let mut entities: Vec<EntityRecord> = Vec::with_capacity(targets.len());
        for ((target, name), res) in targets.iter().zip(&attr_names).zip(results) {
            let attrs = tally.take(res?, ep);
            let id = match target {
                Target::Existing(id) => *id,
                Target::Staged(_) => store.allocate_id(),
            };
            let incoming = EntityRecord {
                id,
                name: name.clone(),
                name_embedding: self.embedder.embed(name)?,
                summary_embedding: self.embedder.embed(&attrs.summary)?,
                summary: attrs.summary,
                tag: attrs.tag,
                episode_idx: [ep].into_iter().collect(),
                layer: 0,
            };
            match target {
                Target::Existing(id) => {
                    let existing = store.entity(*id).expect("resolved against store");
                    entities.push(merge_entity_attributes(existing, &incoming, self.embedder)?);
                    tally.entities_merged += 1;
                }
                Target::Staged(_) => {
                    entities.push(incoming);
                    tally.entities_created += 1;
                }
            }
        }

        // edges
        let mut drafts = tally.take(self.oracle.extract_edges(&episode, &recent, &entities)?, ep);
        let more = tally.take(self.oracle.reflect_missing_edges(&episode, &recent, &entities, &drafts)?, ep);
        drafts.extend(more);
        let mut edges: Vec<RelationEdge> = Vec::new();
        for d in drafts {
            let reflexive = d.source == d.target;
            if reflexive && !cfg.allow_reflexive_edges {
                tally.warnings.push(format!("episode {ep}: dropped reflexive fact {:?}", d.fact));
                continue;
            }
            let fact_embedding = self.embedder.embed(&d.fact)?;
            match self.find_duplicate_edge(&d, &fact_embedding, &edges, tally, ep)? {
                Some(existing) => {
                    tally.edges_merged += 1;
                    if d.invalid_at.is_some() && existing.invalid_at.is_none() {
                        let mut updated = existing;
                        updated.invalid_at = d.invalid_at.filter(|t| *t >= updated.valid_at);
                        upsert_staged(&mut edges, updated);
                    }
                }
                None => {
                    tally.edges_created += 1;
                    edges.push(RelationEdge {
                        id: store.allocate_id(),
                        source: d.source,
                        target: d.target,
                        fact: d.fact,
                        fact_embedding,
                        valid_at: d.valid_at.unwrap_or(episode.valid_at),
                        invalid_at: d.invalid_at,
                        reflexive,
                    });
                }
            }
        }

        Ok(WriteBatch {
            episodes: vec![episode],
            entities,
            edges,
        })
    }

    /// Fused lexical + name-vector candidates, plus names staged earlier in
    /// this episode, sent to the oracle for a same-as verdict.
    fn resolve_name(&self, name: &str, staged: &[String], tally: &mut Tally, ep: NodeId) -> Result<Target> {
        let store = &*self.store;
        let depth = store.config().dedup_candidates;
        let lexical: Vec<NodeId> = store
            .bm25_search(name, TextKind::EntityText, depth)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let vector: Vec<NodeId> = store
            .vector_search(&self.embedder.embed(name)?, VectorKind::EntityName, depth)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let fused = rrf_fuse(&[lexical, vector], store.config().rrf_c);
        let mut offered: Vec<EntityRecord> = fused
            .iter()
            .filter_map(|f| store.entity(f.id).cloned())
            .collect();
        // staged entities get placeholder ids above every allocated id so a
        // verdict can point at them
        let base = u64::MAX - staged.len() as u64;
        for (i, s) in staged.iter().enumerate() {
            let e = self.embedder.embed(s)?;
            offered.push(EntityRecord {
                id: NodeId(base + i as u64),
                name: s.clone(),
                summary: s.clone(),
                tag: Vec::new(),
                episode_idx: Default::default(),
                name_embedding: e.clone(),
                summary_embedding: e,
                layer: 0,
            });
        }
        let verdict = tally.take(self.oracle.resolve_duplicates(name, &offered)?, ep);
        Ok(match verdict {
            DedupVerdict::SameAs(id) if id.0 >= base => Target::Staged((id.0 - base) as usize),
            DedupVerdict::SameAs(id) => Target::Existing(id),
            DedupVerdict::New => Target::Staged(staged.len()),
        })
    }

    /// Edges on the same unordered entity pair, stored or staged, whose fact
    /// embedding is at least the threshold close; the oracle confirms, most
    /// similar first.
    fn find_duplicate_edge(
        &self,
        draft: &EdgeDraft,
        fact_embedding: &crate::model::Embedding,
        staged: &[RelationEdge],
        tally: &mut Tally,
        ep: NodeId,
    ) -> Result<Option<RelationEdge>> {
        let store = &*self.store;
        let same_pair = |e: &RelationEdge| {
            (e.source == draft.source && e.target == draft.target) || (e.source == draft.target && e.target == draft.source)
        };
        let mut pool: Vec<RelationEdge> = staged.iter().filter(|e| same_pair(e)).cloned().collect();
        if store.entity(draft.source).is_some() {
            for (e, _) in store.edges_of(draft.source)? {
                if same_pair(&e) && !pool.iter().any(|p| p.id == e.id) {
                    pool.push(e);
                }
            }
        }
        let threshold = store.config().edge_dedup_threshold;
        let mut close: Vec<(f64, RelationEdge)> = pool
            .into_iter()
            .map(|e| (fact_embedding.cosine(&e.fact_embedding), e))
            .filter(|(s, _)| *s >= threshold)
            .collect();
        close.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        for (_, e) in close {
            if tally.take(self.oracle.resolve_edge_duplicate(&e, draft)?, ep) {
                return Ok(Some(e));
            }
        }
        Ok(None)
    }
}

fn upsert_staged(edges: &mut Vec<RelationEdge>, edge: RelationEdge) {
    match edges.iter_mut().find(|e| e.id == edge.id) {
        Some(slot) => *slot = edge,
        None => edges.push(edge),
    }
}

/// Convenience wrapper around [`Ingestor`].
pub fn ingest(
    store: &mut MemoryStore,
    oracle: &dyn ConceptOracle,
    embedder: &dyn Embedder,
    messages: &[Message],
) -> IngestOutcome {
    match Ingestor::new(store, oracle, embedder) {
        Ok(mut i) => i.ingest(messages),
        Err(e) => IngestOutcome {
            report: IngestReport::default(),
            error: Some(e),
        },
    }
}
