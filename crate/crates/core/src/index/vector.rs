use std::collections::BTreeMap;

use super::{top_k, VectorKind};
use crate::error::{MemoryError, Result};
use crate::model::{Embedding, NodeId};

/// Exact cosine-similarity index: a flat table of unit-normalized vectors per
/// kind, scanned in full on every query.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    partitions: BTreeMap<VectorKind, BTreeMap<NodeId, Embedding>>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            partitions: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn upsert(&mut self, kind: VectorKind, id: NodeId, v: &Embedding) -> Result<()> {
        self.check_dim(v)?;
        self.partitions
            .entry(kind)
            .or_default()
            .insert(id, v.normalized());
        Ok(())
    }

    pub fn remove(&mut self, kind: VectorKind, id: NodeId) {
        if let Some(p) = self.partitions.get_mut(&kind) {
            p.remove(&id);
        }
    }

    pub fn len(&self, kind: VectorKind) -> usize {
        self.partitions.get(&kind).map_or(0, BTreeMap::len)
    }

    pub fn is_empty(&self, kind: VectorKind) -> bool {
        self.len(kind) == 0
    }

    /// Exact top-`limit` by cosine similarity, descending, ties by ascending id.
    pub fn vector_search(&self, query: &Embedding, kind: VectorKind, limit: usize) -> Result<Vec<(NodeId, f64)>> {
        self.check_dim(query)?;
        let Some(part) = self.partitions.get(&kind) else {
            return Ok(Vec::new());
        };
        let q = query.normalized();
        let scored = part.iter().map(|(&id, v)| (id, q.dot(v))).collect();
        Ok(top_k(scored, limit))
    }

    /// Stored vectors whose norm is neither 1 (within 1e-5) nor exactly 0.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (kind, part) in &self.partitions {
            for (id, v) in part {
                let n = v.norm();
                if v.dimension() != self.dim {
                    problems.push(format!("{kind:?}/{id}: dimension {}", v.dimension()));
                } else if n != 0.0 && (n - 1.0).abs() > 1e-5 {
                    problems.push(format!("{kind:?}/{id}: norm {n}"));
                }
            }
        }
        problems
    }

    fn check_dim(&self, v: &Embedding) -> Result<()> {
        if v.dimension() != self.dim {
            return Err(MemoryError::InvalidArgument(format!(
                "vector dimension {} does not match index dimension {}",
                v.dimension(),
                self.dim
            )));
        }
        if !v.is_finite() {
            return Err(MemoryError::InvalidArgument("vector has non-finite components".into()));
        }
        Ok(())
    }
}
