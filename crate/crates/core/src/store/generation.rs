use std::collections::{BTreeMap, BTreeSet};

use crate::model::{CategoryEdge, CategoryRecord, NodeId};

/// One immutable, fully built category hierarchy. Readers hold an `Arc` to a
/// generation, so a swap never exposes a half-replaced hierarchy.
#[derive(Debug, Clone, Default)]
pub struct HierarchyGeneration {
    generation: u64,
    categories: BTreeMap<NodeId, CategoryRecord>,
    edges: BTreeSet<CategoryEdge>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    parents: BTreeMap<NodeId, Vec<NodeId>>,
    /// `layers[i]` holds the ids at layer `i + 1`, ascending.
    layers: Vec<Vec<NodeId>>,
}

impl HierarchyGeneration {
    pub(crate) fn new(generation: u64, categories: Vec<CategoryRecord>, edges: Vec<CategoryEdge>) -> Self {
        let categories: BTreeMap<NodeId, CategoryRecord> =
            categories.into_iter().map(|c| (c.id, c)).collect();
        let edges: BTreeSet<CategoryEdge> = edges.into_iter().collect();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut parents: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for e in &edges {
            children.entry(e.parent).or_default().push(e.child);
            parents.entry(e.child).or_default().push(e.parent);
        }
        let top = categories.values().map(|c| c.layer).max().unwrap_or(0) as usize;
        let mut layers = vec![Vec::new(); top];
        for c in categories.values() {
            layers[c.layer as usize - 1].push(c.id);
        }
        Self {
            generation,
            categories,
            edges,
            children,
            parents,
            layers,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Highest populated layer; 0 when there are no categories.
    pub fn top_layer(&self) -> u32 {
        self.layers.len() as u32
    }

    pub fn category(&self, id: NodeId) -> Option<&CategoryRecord> {
        self.categories.get(&id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &CategoryRecord> {
        self.categories.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &CategoryEdge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    /// Category ids at `layer` (≥ 1), ascending.
    pub fn layer(&self, layer: u32) -> &[NodeId] {
        if layer == 0 {
            return &[];
        }
        self.layers.get(layer as usize - 1).map_or(&[], Vec::as_slice)
    }

    pub fn layer_counts(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn children(&self, parent: NodeId) -> &[NodeId] {
        self.children.get(&parent).map_or(&[], Vec::as_slice)
    }

    pub fn parents(&self, child: NodeId) -> &[NodeId] {
        self.parents.get(&child).map_or(&[], Vec::as_slice)
    }

    /// Every node strictly below `root`, categories and entities alike.
    pub fn descendants(&self, root: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.children(root).to_vec();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend_from_slice(self.children(n));
            }
        }
        seen
    }

    /// Finds a downward chain of names, top first (e.g. `Geography`,
    /// `Geographical Locations`, `Detroit`), matching case-insensitively.
    /// The last name may be an entity, resolved by `entity_name`.
    pub fn find_path(&self, names: &[&str], entity_name: impl Fn(NodeId) -> Option<String>) -> Option<Vec<NodeId>> {
        let first = names.first()?;
        let starts: Vec<NodeId> = self
            .categories
            .values()
            .filter(|c| c.name.eq_ignore_ascii_case(first))
            .map(|c| c.id)
            .collect();
        let name_of = |id: NodeId| -> Option<String> {
            self.categories
                .get(&id)
                .map(|c| c.name.clone())
                .or_else(|| entity_name(id))
        };
        for s in starts {
            let mut path = vec![s];
            if self.extend_path(&mut path, &names[1..], &name_of) {
                return Some(path);
            }
        }
        None
    }

    fn extend_path(&self, path: &mut Vec<NodeId>, rest: &[&str], name_of: &dyn Fn(NodeId) -> Option<String>) -> bool {
        let Some(next) = rest.first() else {
            return true;
        };
        let here = *path.last().unwrap();
        for &child in self.children(here) {
            if name_of(child).is_some_and(|n| n.eq_ignore_ascii_case(next)) {
                path.push(child);
                if self.extend_path(path, &rest[1..], name_of) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
}
