//! Okapi BM25 over an in-memory inverted index.
//!
//! For query terms `q_1..q_m` (repeats counted) and document `D`:
//!
//! ```text
//! score(D) = Σ_i idf(q_i) · tf(q_i,D)·(k1+1) / (tf(q_i,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(q)   = ln(1 + (N − df(q) + 0.5) / (df(q) + 0.5))
//! ```
//!
//! The `1 +` inside the logarithm keeps idf positive for terms present in more
//! than half the corpus, so a matching document never scores below zero.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{tokenize, top_k, TextKind};
use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Default)]
struct Partition {
    /// term → (doc → term frequency); inner maps iterate in doc-id order.
    postings: HashMap<String, BTreeMap<NodeId, u32>>,
    /// doc → distinct terms, kept for removal on update.
    doc_terms: BTreeMap<NodeId, Vec<String>>,
    doc_len: BTreeMap<NodeId, u32>,
    total_len: u64,
}

impl Partition {
    fn remove(&mut self, id: NodeId) {
        if let Some(terms) = self.doc_terms.remove(&id) {
            for t in terms {
                if let Some(list) = self.postings.get_mut(&t) {
                    list.remove(&id);
                    if list.is_empty() {
                        self.postings.remove(&t);
                    }
                }
            }
        }
        if let Some(len) = self.doc_len.remove(&id) {
            self.total_len -= u64::from(len);
        }
    }

    fn insert(&mut self, id: NodeId, tokens: Vec<String>) {
        self.remove(id);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        let len = tokens.len() as u32;
        self.doc_len.insert(id, len);
        self.total_len += u64::from(len);
        self.doc_terms.insert(id, tf.keys().cloned().collect());
        for (term, count) in tf {
            self.postings.entry(term).or_default().insert(id, count);
        }
    }

    fn doc_count(&self) -> usize {
        self.doc_len.len()
    }

    fn avgdl(&self) -> f64 {
        if self.doc_len.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_len.len() as f64
        }
    }
}

/// Per-kind BM25 inverted index.
#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    params: Bm25Params,
    partitions: BTreeMap<TextKind, Partition>,
}

impl LexicalIndex {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            partitions: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Indexes (or re-indexes) `id` under `kind` with the given text.
    pub fn upsert(&mut self, kind: TextKind, id: NodeId, text: &str) {
        self.upsert_tokens(kind, id, tokenize(text));
    }

    /// Indexes pre-tokenized text; used for the name-boosted entity field.
    pub fn upsert_tokens(&mut self, kind: TextKind, id: NodeId, tokens: Vec<String>) {
        self.partitions.entry(kind).or_default().insert(id, tokens);
    }

    pub fn remove(&mut self, kind: TextKind, id: NodeId) {
        if let Some(p) = self.partitions.get_mut(&kind) {
            p.remove(id);
        }
    }

    pub fn doc_count(&self, kind: TextKind) -> usize {
        self.partitions.get(&kind).map_or(0, Partition::doc_count)
    }

    pub fn document_frequency(&self, kind: TextKind, term: &str) -> usize {
        self.partitions
            .get(&kind)
            .and_then(|p| p.postings.get(term))
            .map_or(0, BTreeMap::len)
    }

    pub fn average_length(&self, kind: TextKind) -> f64 {
        self.partitions.get(&kind).map_or(0.0, Partition::avgdl)
    }

    /// BM25 top-`limit` for `query` in partition `kind`: descending score,
    /// ties by ascending id, zero-score documents dropped. A query with no
    /// terms yields an empty list.
    pub fn bm25_search(&self, query: &str, kind: TextKind, limit: usize) -> Vec<(NodeId, f64)> {
        let terms = tokenize(query);
        let Some(part) = self.partitions.get(&kind) else {
            return Vec::new();
        };
        if terms.is_empty() || part.doc_count() == 0 {
            return Vec::new();
        }
        let n = part.doc_count() as f64;
        let avgdl = part.avgdl();
        let Bm25Params { k1, b } = self.params;

        let mut scores: BTreeMap<NodeId, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = part.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (&doc, &tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(part.doc_len[&doc]);
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
                *scores.entry(doc).or_insert(0.0) += s;
            }
        }
        let scored = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        top_k(scored, limit)
    }

    /// Checks that posting lists, document frequencies and length totals are
    /// mutually consistent. Returns a description of each inconsistency.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (kind, p) in &self.partitions {
            let total: u64 = p.doc_len.values().map(|&l| u64::from(l)).sum();
            if total != p.total_len {
                problems.push(format!("{kind:?}: total length {} != sum {}", p.total_len, total));
            }
            for (term, list) in &p.postings {
                for doc in list.keys() {
                    if !p.doc_terms.get(doc).is_some_and(|ts| ts.contains(term)) {
                        problems.push(format!("{kind:?}: posting {term}/{doc} not in doc terms"));
                    }
                }
            }
            for (doc, terms) in &p.doc_terms {
                for t in terms {
                    if !p.postings.get(t).is_some_and(|l| l.contains_key(doc)) {
                        problems.push(format!("{kind:?}: doc {doc} term {t} missing posting"));
                    }
                }
            }
        }
        problems
    }
}
