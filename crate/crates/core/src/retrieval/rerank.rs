//! Query–item relevance scoring applied to the union of both routes.

use std::collections::BTreeSet;

use serde_json::json;

use super::RankedItem;
use crate::error::{MemoryError, Result};
use crate::index::tokenize;
use crate::oracle::JsonTransport;

pub trait Reranker: Send + Sync {
    /// Rescores `items` against `query` and returns them best first. Warnings
    /// describe any degradation (for example a remote fallback).
    fn rerank(&self, query: &str, items: Vec<RankedItem>) -> (Vec<RankedItem>, Vec<String>);
}

/// Weighted token overlap: each distinct query token found in the item's
/// display text adds 1.0, or 0.5 for tokens shorter than three characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl LexicalReranker {
    pub fn score(query_tokens: &BTreeSet<String>, text: &str) -> f64 {
        let doc: BTreeSet<String> = tokenize(text).into_iter().collect();
        query_tokens
            .iter()
            .filter(|t| doc.contains(*t))
            .map(|t| if t.chars().count() >= 3 { 1.0 } else { 0.5 })
            .fold(0.0, |a, w| a + w)
    }
}

impl Reranker for LexicalReranker {
    fn rerank(&self, query: &str, mut items: Vec<RankedItem>) -> (Vec<RankedItem>, Vec<String>) {
        let q: BTreeSet<String> = tokenize(query).into_iter().collect();
        for it in &mut items {
            it.score = Self::score(&q, &it.display_text);
        }
        sort_by_score(&mut items);
        (items, Vec::new())
    }
}

/// Descending score, ties by ascending id.
pub(crate) fn sort_by_score(items: &mut [RankedItem]) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

/// Scores through a `rerank` endpoint taking `{model, query, documents}` and
/// returning `{results: [{index, relevance_score}]}`. Falls back to
/// [`LexicalReranker`] when the call or its reply fails.
pub struct RemoteReranker {
    transport: Box<dyn JsonTransport>,
    model: String,
}

impl RemoteReranker {
    pub fn new(transport: Box<dyn JsonTransport>, model: impl Into<String>) -> Self {
        Self {
            transport,
            model: model.into(),
        }
    }

    fn scores(&self, query: &str, items: &[RankedItem]) -> Result<Vec<f64>> {
        let docs: Vec<&str> = items.iter().map(|i| i.display_text.as_str()).collect();
        let resp = self.transport.post_json(
            "rerank",
            &json!({ "model": self.model, "query": query, "documents": docs }),
        )?;
        let results = resp
            .get("results")
            .and_then(|r| r.as_array())
            .ok_or_else(|| MemoryError::OracleFormat("rerank reply has no results array".into()))?;
        let mut scores = vec![None; items.len()];
        for r in results {
            let idx = r.get("index").and_then(|v| v.as_u64()).map(|v| v as usize);
            let score = r.get("relevance_score").and_then(|v| v.as_f64());
            match (idx, score) {
                (Some(i), Some(s)) if i < items.len() && s.is_finite() => scores[i] = Some(s),
                _ => return Err(MemoryError::OracleFormat(format!("bad rerank result {r}"))),
            }
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| MemoryError::OracleFormat(format!("rerank reply skipped document {i}"))))
            .collect()
    }
}

impl Reranker for RemoteReranker {
    fn rerank(&self, query: &str, mut items: Vec<RankedItem>) -> (Vec<RankedItem>, Vec<String>) {
        if items.is_empty() {
            return (items, Vec::new());
        }
        match self.scores(query, &items) {
            Ok(scores) => {
                for (it, s) in items.iter_mut().zip(scores) {
                    it.score = s;
                }
                sort_by_score(&mut items);
                (items, Vec::new())
            }
            Err(e) => {
                log::warn!("remote reranker failed, using lexical scores: {e}");
                let (items, _) = LexicalReranker.rerank(query, items);
                (items, vec![format!("remote reranker failed, used lexical scores: {e}")])
            }
        }
    }
}
