//! Bottom-up category hierarchy construction.
//!
//! Layer `i` is built by categorizing every node at layer `i - 1`. Each
//! category must cover at least `n` children; undersized groups get one more
//! categorization attempt restricted to their children, and whatever is still
//! undersized afterwards is promoted node by node as standalone categories.
//! From layer 2 on, a layer may not be larger than the one beneath it. The
//! finished layers are published with a single hierarchy swap.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::EngineConfig;
use crate::embed::Embedder;
use crate::error::{MemoryError, Result};
use crate::model::{clamp_tags, CategoryEdge, CategoryRecord, NodeId};
use crate::oracle::{
    CategorizationResult, CategorizeNode, CategorizeRequest, CategoryAssignment, ConceptOracle, OracleResponse,
    TokenUsage,
};
use crate::store::{LayerNode, MemoryStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuildConfig {
    pub compression_ratio: usize,
    pub max_layers: usize,
    pub batch_size: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self::from(&EngineConfig::default())
    }
}

impl From<&EngineConfig> for BuildConfig {
    fn from(c: &EngineConfig) -> Self {
        Self {
            compression_ratio: c.compression_ratio,
            max_layers: c.max_layers,
            batch_size: c.categorize_batch_size,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.compression_ratio < 2 {
            return Err(MemoryError::Config("compression_ratio must be at least 2".into()));
        }
        if self.max_layers < 1 {
            return Err(MemoryError::Config("max_layers must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(MemoryError::Config("categorize batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReductionViolation,
    MaxLayers,
    ConvergedToRoots,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerReport {
    pub layer: u32,
    pub nodes: usize,
    pub promoted: usize,
    pub retried_children: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscardedLayer {
    pub layer: u32,
    pub nodes: usize,
    pub promoted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchyReport {
    pub generation: u64,
    pub base_entities: usize,
    /// Persisted layers, bottom first.
    pub layers: Vec<LayerReport>,
    /// Candidate layer dropped at termination, if any.
    pub discarded: Option<DiscardedLayer>,
    pub termination: Termination,
    pub audit: Vec<String>,
    pub oracle_calls: usize,
    pub token_usage: TokenUsage,
    pub warnings: Vec<String>,
}

impl HierarchyReport {
    /// Node counts with the entity layer first.
    pub fn layer_counts(&self) -> Vec<usize> {
        std::iter::once(self.base_entities)
            .chain(self.layers.iter().map(|l| l.nodes))
            .collect()
    }
}

/// Splits categories into those with at least `n` distinct children and the
/// rest.
pub fn check_compression(
    assignment: &CategorizationResult,
    n: usize,
) -> (Vec<CategoryAssignment>, Vec<CategoryAssignment>) {
    assignment.categories.iter().cloned().partition(|c| {
        c.child_indexes.iter().collect::<BTreeSet<_>>().len() >= n
    })
}

/// Layer 1 is exempt; above it a layer may hold at most as many nodes as the
/// layer beneath.
pub fn check_reduction(candidate: usize, previous: usize, layer: u32) -> bool {
    layer <= 1 || candidate <= previous
}

/// Category name for a promoted node. Category names may not use "and" as a
/// connector, so it is spelled "&".
pub fn promoted_name(name: &str) -> String {
    name.split(' ')
        .map(|w| if w.eq_ignore_ascii_case("and") { "&" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Summary stored on a category: its name followed by its children's names.
pub fn category_summary(name: &str, children: &[&str]) -> String {
    format!("{name}: groups {}", children.join(", "))
}

struct Candidate {
    categories: Vec<CategoryRecord>,
    edges: Vec<CategoryEdge>,
    promoted: usize,
    retried_children: usize,
}

struct Builder<'a> {
    store: &'a MemoryStore,
    oracle: &'a dyn ConceptOracle,
    embedder: &'a dyn Embedder,
    config: BuildConfig,
    oracle_calls: usize,
    usage: TokenUsage,
    warnings: Vec<String>,
}

/// Builds a fresh hierarchy over the current base graph and swaps it in.
/// On any error the previously active generation stays in place.
pub fn build(
    store: &MemoryStore,
    oracle: &dyn ConceptOracle,
    embedder: &dyn Embedder,
    config: BuildConfig,
) -> Result<HierarchyReport> {
    config.validate()?;
    if embedder.dimension() != store.dimension() {
        return Err(MemoryError::Config(format!(
            "embedder dimension {} does not match store dimension {}",
            embedder.dimension(),
            store.dimension()
        )));
    }
    let base = store.nodes_at_layer(0)?;
    if base.is_empty() {
        return Err(MemoryError::Data("base graph has no entities to categorize".into()));
    }
    let mut b = Builder {
        store,
        oracle,
        embedder,
        config,
        oracle_calls: 0,
        usage: TokenUsage::default(),
        warnings: Vec::new(),
    };

    let base_entities = base.len();
    let mut prev = base;
    let mut categories: Vec<CategoryRecord> = Vec::new();
    let mut edges: Vec<CategoryEdge> = Vec::new();
    let mut layers: Vec<LayerReport> = Vec::new();
    let mut discarded = None;
    let mut termination = Termination::MaxLayers;

    for layer in 1..=config.max_layers as u32 {
        if prev.len() <= 1 {
            termination = Termination::ConvergedToRoots;
            break;
        }
        let cand = b.build_layer(layer, &prev)?;
        let count = cand.categories.len();
        let drop_reason = if !check_reduction(count, prev.len(), layer) {
            Some(Termination::ReductionViolation)
        } else if layer >= 2 && cand.promoted == count {
            // nothing merged: every further layer would repeat this one
            Some(Termination::ConvergedToRoots)
        } else {
            None
        };
        if let Some(reason) = drop_reason {
            log::info!("layer {layer} discarded ({reason:?}): {count} nodes over {}", prev.len());
            discarded = Some(DiscardedLayer {
                layer,
                nodes: count,
                promoted: cand.promoted,
            });
            termination = reason;
            break;
        }
        log::info!("layer {layer}: {count} categories, {} promoted", cand.promoted);
        layers.push(LayerReport {
            layer,
            nodes: count,
            promoted: cand.promoted,
            retried_children: cand.retried_children,
        });
        prev = cand.categories.iter().cloned().map(LayerNode::Category).collect();
        categories.extend(cand.categories);
        edges.extend(cand.edges);
        if prev.len() <= 1 {
            termination = Termination::ConvergedToRoots;
            break;
        }
    }

    store.swap_hierarchy(categories, edges)?;
    let generation = store.hierarchy().generation();
    Ok(HierarchyReport {
        generation,
        base_entities,
        layers,
        discarded,
        termination,
        audit: store.audit().into_iter().map(|v| v.to_string()).collect(),
        oracle_calls: b.oracle_calls,
        token_usage: b.usage,
        warnings: b.warnings,
    })
}

impl Builder<'_> {
    fn take<T>(&mut self, r: OracleResponse<T>, layer: u32) -> T {
        self.oracle_calls += 1;
        self.usage.add(r.usage);
        self.warnings
            .extend(r.warnings.into_iter().map(|w| format!("layer {layer}: {w}")));
        r.payload
    }

    fn build_layer(&mut self, layer: u32, nodes: &[LayerNode]) -> Result<Candidate> {
        let n = self.config.compression_ratio;
        let prev_example = prev_example(nodes);
        let all: Vec<usize> = (0..nodes.len()).collect();

        let first = self.categorize(layer, nodes, &all, &[], false, &prev_example)?;
        let (mut ok, undersized) = check_compression(&first, n);

        let mut retried_children = 0;
        let mut promote: Vec<usize> = Vec::new();
        if !undersized.is_empty() {
            let rest: Vec<usize> = undersized
                .iter()
                .flat_map(|c| c.child_indexes.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            retried_children = rest.len();
            let second = self.categorize(layer, nodes, &rest, &ok, true, &prev_example)?;
            for c in second.categories {
                match ok.iter_mut().find(|o| o.name == c.name) {
                    Some(o) => o.child_indexes.extend(c.child_indexes),
                    None if c.child_indexes.iter().collect::<BTreeSet<_>>().len() >= n => ok.push(c),
                    None => promote.extend(c.child_indexes),
                }
            }
            // children the retry left out entirely are promoted too
            let placed: BTreeSet<usize> = ok.iter().flat_map(|c| c.child_indexes.iter().copied()).collect();
            promote.extend(rest.iter().copied().filter(|i| !placed.contains(i)));
        }
        let placed: BTreeSet<usize> = ok.iter().flat_map(|c| c.child_indexes.iter().copied()).collect();
        let promote: BTreeSet<usize> = promote.into_iter().filter(|i| !placed.contains(i)).collect();

        let mut out = Candidate {
            categories: Vec::new(),
            edges: Vec::new(),
            promoted: promote.len(),
            retried_children,
        };
        for c in ok {
            let children: BTreeSet<usize> = c.child_indexes.into_iter().collect();
            let (tag, _) = clamp_tags(&c.tag);
            self.push_category(&mut out, layer, c.name, tag, nodes, &children)?;
        }
        for i in promote {
            let node = &nodes[i];
            self.push_category(
                &mut out,
                layer,
                promoted_name(node.name()),
                node.tag().to_vec(),
                nodes,
                &[i].into_iter().collect(),
            )?;
        }
        Ok(out)
    }

    fn push_category(
        &self,
        out: &mut Candidate,
        layer: u32,
        name: String,
        tag: Vec<String>,
        nodes: &[LayerNode],
        children: &BTreeSet<usize>,
    ) -> Result<()> {
        let child_names: Vec<&str> = children.iter().map(|&i| nodes[i].name()).collect();
        let summary = category_summary(&name, &child_names);
        let id = self.store.allocate_id();
        let episode_idx: BTreeSet<NodeId> = children
            .iter()
            .flat_map(|&i| nodes[i].episode_idx().iter().copied())
            .collect();
        for &i in children {
            out.edges.push(CategoryEdge {
                parent: id,
                child: nodes[i].id(),
            });
        }
        out.categories.push(CategoryRecord {
            id,
            name_embedding: self.embedder.embed(&name)?,
            summary_embedding: self.embedder.embed(&summary)?,
            name,
            summary,
            tag,
            episode_idx,
            layer,
        });
        Ok(())
    }

    /// Categorizes `subset` of `nodes` in shards of `batch_size`, sequentially,
    /// each shard seeing the categories created so far. Same-named categories
    /// across shards are merged. Returned indexes refer to `nodes`.
    fn categorize(
        &mut self,
        layer: u32,
        nodes: &[LayerNode],
        subset: &[usize],
        existing: &[CategoryAssignment],
        retry: bool,
        prev_example: &str,
    ) -> Result<CategorizationResult> {
        let mut merged: Vec<CategoryAssignment> = Vec::new();
        let mut known: BTreeMap<String, String> = existing
            .iter()
            .map(|c| (c.name.clone(), describe_assignment(c, nodes)))
            .collect();
        for shard in subset.chunks(self.config.batch_size) {
            let request = CategorizeRequest {
                layer,
                nodes: shard
                    .iter()
                    .map(|&i| CategorizeNode {
                        name: nodes[i].name().to_string(),
                        description: describe(&nodes[i]),
                    })
                    .collect(),
                existing_categories: known.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                compression_ratio: self.config.compression_ratio,
                retry,
                prev_example: prev_example.to_string(),
            };
            let resp = self.oracle.categorize_nodes(&request)?;
            let result = self.take(resp, layer);
            for c in result.categories {
                let global: Vec<usize> = c.child_indexes.iter().map(|&j| shard[j]).collect();
                match merged.iter_mut().find(|m| m.name == c.name) {
                    Some(m) => {
                        m.child_indexes.extend(global);
                        for t in c.tag {
                            if !m.tag.iter().any(|x| x.eq_ignore_ascii_case(&t)) {
                                m.tag.push(t);
                            }
                        }
                    }
                    None => merged.push(CategoryAssignment {
                        name: c.name,
                        child_indexes: global,
                        tag: c.tag,
                    }),
                }
            }
            for m in &merged {
                known.insert(m.name.clone(), describe_assignment(m, nodes));
            }
        }
        Ok(CategorizationResult { categories: merged })
    }
}

fn describe(node: &LayerNode) -> String {
    if node.tag().is_empty() {
        node.summary().to_string()
    } else {
        format!("{} [{}]", node.summary(), node.tag().join(", "))
    }
}

fn describe_assignment(c: &CategoryAssignment, nodes: &[LayerNode]) -> String {
    let names: Vec<&str> = c.child_indexes.iter().map(|&i| nodes[i].name()).collect();
    category_summary(&c.name, &names)
}

/// A few lines sketching the layer being categorized, handed to the prompt.
fn prev_example(nodes: &[LayerNode]) -> String {
    nodes
        .iter()
        .take(3)
        .map(|n| format!("- {}", n.name()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::model::{EntityRecord, EpisodeRecord, Timestamp};
    use crate::oracle::{ScriptedFixture, ScriptedOracle, TaxonomyEntry};
    use crate::store::WriteBatch;
    use proptest::prelude::*;

    const DIM: usize = 16;

    fn store_with(names: &[&str]) -> MemoryStore {
        let store = MemoryStore::new(EngineConfig {
            embedding_dim: DIM,
            ..EngineConfig::default()
        })
        .unwrap();
        let emb = HashEmbedder::new(DIM);
        let mut store = store;
        let ep = EpisodeRecord {
            id: store.allocate_id(),
            content: names.join(" "),
            valid_at: Timestamp::from_unix(0).unwrap(),
            episode_embedding: emb.embed(&names.join(" ")).unwrap(),
            source_session: "s".into(),
        };
        let entities = names
            .iter()
            .map(|n| EntityRecord {
                id: store.allocate_id(),
                name: n.to_string(),
                summary: format!("{n} thing"),
                tag: vec![],
                episode_idx: [ep.id].into_iter().collect(),
                name_embedding: emb.embed(n).unwrap(),
                summary_embedding: emb.embed(n).unwrap(),
                layer: 0,
            })
            .collect();
        store
            .apply(WriteBatch {
                episodes: vec![ep],
                entities,
                edges: vec![],
            })
            .unwrap();
        store
    }

    fn entry(name: &str, children: &[&str], layer: Option<u32>, retry: bool) -> TaxonomyEntry {
        TaxonomyEntry {
            name: name.into(),
            children: children.iter().map(|c| c.to_string()).collect(),
            tags: vec![],
            layer,
            retry,
        }
    }

    fn run(store: &MemoryStore, taxonomy: Vec<TaxonomyEntry>, n: usize) -> HierarchyReport {
        let oracle = ScriptedOracle::new(ScriptedFixture {
            taxonomy,
            ..ScriptedFixture::default()
        });
        build(
            store,
            &oracle,
            &HashEmbedder::new(DIM),
            BuildConfig {
                compression_ratio: n,
                max_layers: 5,
                batch_size: 64,
            },
        )
        .unwrap()
    }

    #[test]
    fn nine_entities_three_by_three() {
        let names = ["a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3"];
        let store = store_with(&names);
        let tax = vec![
            entry("A", &["a1", "a2", "a3"], Some(1), false),
            entry("B", &["b1", "b2", "b3"], Some(1), false),
            entry("C", &["c1", "c2", "c3"], Some(1), false),
            entry("Root", &["A", "B", "C"], Some(2), false),
        ];
        let r = run(&store, tax, 3);
        assert_eq!(r.layer_counts(), vec![9, 3, 1]);
        assert_eq!(r.termination, Termination::ConvergedToRoots);
        assert!(r.audit.is_empty(), "{:?}", r.audit);
        let h = store.hierarchy();
        let root = h.layer(2)[0];
        assert_eq!(h.descendants(root).len(), 12);
    }

    #[test]
    fn retry_merges_undersized_groups() {
        let store = store_with(&["x1", "x2", "y1", "y2", "z1", "z2", "z3"]);
        let tax = vec![
            entry("X", &["x1", "x2"], Some(1), false),
            entry("Y", &["y1", "y2"], Some(1), false),
            entry("Z", &["z1", "z2", "z3"], Some(1), false),
            entry("XY", &["x1", "x2", "y1", "y2"], Some(1), true),
        ];
        let r = run(&store, tax, 3);
        assert_eq!(r.layers[0].nodes, 2);
        assert_eq!(r.layers[0].promoted, 0);
        assert_eq!(r.layers[0].retried_children, 4);
    }

    #[test]
    fn unmergeable_nodes_are_promoted() {
        let store = store_with(&["p1", "p2", "p3", "lonely"]);
        let tax = vec![entry("P", &["p1", "p2", "p3"], Some(1), false)];
        let r = run(&store, tax, 3);
        assert_eq!(r.layers[0].nodes, 2);
        assert_eq!(r.layers[0].promoted, 1);
        let h = store.hierarchy();
        let promoted = h.categories().find(|c| c.name == "lonely").unwrap();
        assert_eq!(h.children(promoted.id).len(), 1);
        // layer 2 would be two singletons over two nodes: converged
        assert_eq!(r.termination, Termination::ConvergedToRoots);
        assert!(r.audit.is_empty());
    }

    #[test]
    fn and_in_promoted_names_is_rewritten() {
        assert_eq!(promoted_name("Tom and Jerry"), "Tom & Jerry");
        assert_eq!(promoted_name("Andrew"), "Andrew");
    }

    #[test]
    fn reduction_rule_boundaries() {
        assert!(check_reduction(12, 10, 1));
        assert!(check_reduction(7, 7, 3));
        assert!(!check_reduction(12, 10, 2));
    }

    #[test]
    fn empty_base_graph_is_an_error() {
        let store = MemoryStore::new(EngineConfig {
            embedding_dim: DIM,
            ..EngineConfig::default()
        })
        .unwrap();
        let oracle = ScriptedOracle::new(ScriptedFixture::default());
        let err = build(&store, &oracle, &HashEmbedder::new(DIM), BuildConfig::default()).unwrap_err();
        assert!(matches!(err, MemoryError::Data(_)));
    }

    #[test]
    fn sharding_reuses_categories_by_name() {
        let names = ["a1", "a2", "a3", "a4", "a5", "a6"];
        let store = store_with(&names);
        let oracle = ScriptedOracle::new(ScriptedFixture {
            taxonomy: vec![entry("A", &names, Some(1), false)],
            ..ScriptedFixture::default()
        });
        let r = build(
            &store,
            &oracle,
            &HashEmbedder::new(DIM),
            BuildConfig {
                compression_ratio: 3,
                max_layers: 5,
                batch_size: 2,
            },
        )
        .unwrap();
        assert_eq!(r.layer_counts(), vec![6, 1]);
        assert_eq!(r.oracle_calls, 3);
    }

    proptest! {
        #[test]
        fn compression_partition_matches_counting(
            sizes in proptest::collection::vec(0usize..6, 0..12),
            n in 2usize..5,
        ) {
            let mut next = 0;
            let cats: Vec<CategoryAssignment> = sizes
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    let idx = (next..next + s).collect();
                    next += s;
                    CategoryAssignment { name: format!("c{k}"), child_indexes: idx, tag: vec![] }
                })
                .collect();
            let (ok, under) = check_compression(&CategorizationResult { categories: cats }, n);
            prop_assert_eq!(ok.len(), sizes.iter().filter(|&&s| s >= n).count());
            prop_assert_eq!(under.len(), sizes.iter().filter(|&&s| s < n).count());
        }
    }
}
