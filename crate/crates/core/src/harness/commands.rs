//! The operations behind each CLI verb. Each returns a serializable report;
//! printing and exit codes are the binary's business.

use std::path::Path;

use serde::Serialize;

use super::config::HarnessConfig;
use super::corpus::{load_cases, load_messages};
use super::eval::{run_eval, EvalOptions, EvalReport};
use crate::error::{MemoryError, Result};
use crate::hierarchy::{self, BuildConfig, HierarchyReport};
use crate::ingest::{self, IngestOutcome};
use crate::model::{NodeId, Timestamp};
use crate::retrieval::{QueryAnswer, QueryFailure, RetrievalMode, Retriever, SearchBudget};
use crate::store::{MemoryStore, StoreStats};

/// Opens the snapshot at `path`, or a fresh store when none exists yet.
fn open_or_create(path: &Path, config: &HarnessConfig) -> Result<MemoryStore> {
    if path.exists() {
        MemoryStore::load_snapshot(path)
    } else {
        MemoryStore::new(config.engine.clone())
    }
}

fn open(path: &Path) -> Result<MemoryStore> {
    if !path.exists() {
        return Err(MemoryError::NotFound(format!("store snapshot {}", path.display())));
    }
    MemoryStore::load_snapshot(path)
}

/// Ingests a corpus into the store at `store_path`, creating it if needed.
/// Whatever was committed is saved even when ingestion stops early.
pub fn cmd_ingest(corpus: &Path, store_path: &Path, config: &HarnessConfig, sample: Option<&str>) -> Result<IngestOutcome> {
    let messages = load_messages(corpus, sample)?;
    let mut store = open_or_create(store_path, config)?;
    let oracle = config.oracle()?;
    let embedder = config.embedder(store.dimension());
    let outcome = ingest::ingest(&mut store, oracle.as_ref(), embedder.as_ref(), &messages);
    if outcome.report.episodes_created > 0 || !store_path.exists() {
        store.save_snapshot(store_path)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOverrides {
    pub compression_ratio: Option<usize>,
    pub max_layers: Option<usize>,
}

/// Rebuilds the hierarchy and saves the store. On failure the snapshot on
/// disk is left as it was.
pub fn cmd_build_hierarchy(store_path: &Path, config: &HarnessConfig, overrides: BuildOverrides) -> Result<HierarchyReport> {
    let store = open(store_path)?;
    let oracle = config.oracle()?;
    let embedder = config.embedder(store.dimension());
    let mut build = BuildConfig::from(store.config());
    if let Some(n) = overrides.compression_ratio {
        build.compression_ratio = n;
    }
    if let Some(m) = overrides.max_layers {
        build.max_layers = m;
    }
    let report = hierarchy::build(&store, oracle.as_ref(), embedder.as_ref(), build)?;
    store.save_snapshot(store_path)?;
    Ok(report)
}

/// One question against the stored memory. `k` defaults to the store's
/// configured budget.
pub fn cmd_ask(
    store_path: &Path,
    config: &HarnessConfig,
    question: &str,
    mode: RetrievalMode,
    k: Option<usize>,
) -> Result<std::result::Result<QueryAnswer, Box<QueryFailure>>> {
    let store = open(store_path)?;
    let oracle = config.oracle()?;
    let embedder = config.embedder(store.dimension());
    let reranker = config.reranker();
    let budget = SearchBudget::new(k.unwrap_or(store.config().top_k))?;
    let retriever = Retriever::new(&store, oracle.as_ref(), embedder.as_ref(), reranker.as_ref());
    Ok(retriever.answer_query(question, budget, mode))
}

#[derive(Debug, Clone, Copy)]
pub struct EvalFlags {
    pub mode: RetrievalMode,
    pub k: Option<usize>,
    pub include_adversarial: bool,
}

/// Answers and judges every case. Never writes to the store.
pub fn cmd_eval(store_path: &Path, config: &HarnessConfig, cases_path: &Path, sample: Option<&str>, flags: EvalFlags) -> Result<EvalReport> {
    let store = open(store_path)?;
    let cases = load_cases(cases_path, sample)?;
    let oracle = config.oracle()?;
    let embedder = config.embedder(store.dimension());
    let reranker = config.reranker();
    let retriever = Retriever::new(&store, oracle.as_ref(), embedder.as_ref(), reranker.as_ref());
    let opts = EvalOptions {
        mode: flags.mode,
        k: flags.k.unwrap_or(store.config().top_k),
        include_adversarial: flags.include_adversarial,
        parallelism: store.config().parallelism,
    };
    run_eval(&retriever, oracle.as_ref(), &cases, opts, store.hierarchy().generation())
}

pub fn cmd_inspect_stats(store_path: &Path) -> Result<StoreStats> {
    Ok(open(store_path)?.stats())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeView {
    pub id: NodeId,
    pub fact: String,
    pub other: String,
    pub valid_at: Timestamp,
    pub invalid_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeView {
    pub id: NodeId,
    pub valid_at: Timestamp,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityView {
    pub id: NodeId,
    pub name: String,
    pub summary: String,
    pub tag: Vec<String>,
    pub categories: Vec<String>,
    pub edges: Vec<EdgeView>,
    pub episodes: Vec<EpisodeView>,
}

pub fn cmd_inspect_entity(store_path: &Path, name: &str) -> Result<EntityView> {
    let store = open(store_path)?;
    let e = store
        .entity_by_name(name)
        .ok_or_else(|| MemoryError::NotFound(format!("entity {name:?}")))?;
    let h = store.hierarchy();
    Ok(EntityView {
        id: e.id,
        name: e.name.clone(),
        summary: e.summary.clone(),
        tag: e.tag.clone(),
        categories: h
            .parents(e.id)
            .iter()
            .filter_map(|p| h.category(*p).map(|c| c.name.clone()))
            .collect(),
        edges: store
            .edges_of(e.id)?
            .into_iter()
            .map(|(edge, other)| EdgeView {
                id: edge.id,
                fact: edge.fact,
                other: other.name,
                valid_at: edge.valid_at,
                invalid_at: edge.invalid_at,
            })
            .collect(),
        episodes: store
            .episodes_of(e.id)?
            .into_iter()
            .map(|ep| EpisodeView {
                id: ep.id,
                valid_at: ep.valid_at,
                content: ep.content,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathView {
    pub names: Vec<String>,
    pub ids: Vec<NodeId>,
}

/// Checks that `names` form a parent-to-child chain, top first.
pub fn cmd_inspect_path(store_path: &Path, names: &[String]) -> Result<PathView> {
    if names.is_empty() {
        return Err(MemoryError::InvalidArgument("path needs at least one name".into()));
    }
    let store = open(store_path)?;
    let h = store.hierarchy();
    if h.is_empty() {
        return Err(MemoryError::HierarchyAbsent);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let ids = h
        .find_path(&refs, |id| store.entity(id).map(|e| e.name.clone()))
        .ok_or_else(|| MemoryError::NotFound(format!("category path {}", names.join(" -> "))))?;
    Ok(PathView {
        names: names.to_vec(),
        ids,
    })
}
