//! Reciprocal rank fusion.
//!
//! ```text
//! score(x) = Σ_lists 1 / (c + rank_l(x))      rank is 1-based; absent lists add 0
//! ```
//!
//! Ordered by descending score, then by the best (smallest) rank x reached in
//! any list, then by ascending id. Sums are accumulated in list order so the
//! result is reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedItem {
    pub id: NodeId,
    pub score: f64,
    pub best_rank: usize,
    /// 1-based rank in each input list, `None` where absent.
    pub ranks: Vec<Option<usize>>,
}

pub fn rrf_fuse(rank_lists: &[Vec<NodeId>], c: u32) -> Vec<FusedItem> {
    let mut acc: BTreeMap<NodeId, FusedItem> = BTreeMap::new();
    for (li, list) in rank_lists.iter().enumerate() {
        for (pos, &id) in list.iter().enumerate() {
            let rank = pos + 1;
            let item = acc.entry(id).or_insert_with(|| FusedItem {
                id,
                score: 0.0,
                best_rank: usize::MAX,
                ranks: vec![None; rank_lists.len()],
            });
            if item.ranks[li].is_some() {
                // repeated id within one list: only its first rank counts
                continue;
            }
            item.ranks[li] = Some(rank);
            item.score += 1.0 / (f64::from(c) + rank as f64);
            item.best_rank = item.best_rank.min(rank);
        }
    }
    let mut out: Vec<FusedItem> = acc.into_values().collect();
    out.sort_by(fused_order);
    out
}

fn fused_order(a: &FusedItem, b: &FusedItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.best_rank.cmp(&b.best_rank))
        .then(a.id.cmp(&b.id))
}
