//! Schema checks applied to every oracle payload before it is returned.
//!
//! Functions returning `Result<_, String>` describe unrecoverable shape
//! problems; the remote oracle feeds that message back to the model in its
//! single repair reprompt. Everything else is repaired in place and reported
//! as a warning.

use std::collections::{BTreeSet, HashSet};

use serde::Deserialize;

use super::{
    is_speaker_alias, CategorizationResult, CategorizeRequest, DedupVerdict, EdgeDraft, EntityAttributes,
    NodeSelection, OfferedNode, SelectedNode, SPEAKER_CATEGORY,
};
use crate::index::tokenize;
use crate::model::{clamp_tags, has_and_connector, EntityRecord, NodeId, Timestamp};

/// Lowercased alphanumeric tokens joined by single spaces.
pub fn normalize_text(s: &str) -> String {
    tokenize(s).join(" ")
}

/// Trims, drops blanks and removes case-insensitive repeats, keeping first
/// occurrences in order.
pub fn entity_names(raw: Vec<String>, warnings: &mut Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for n in raw {
        let t = n.trim();
        if t.is_empty() {
            warnings.push("dropped blank entity name".into());
            continue;
        }
        if seen.insert(t.to_lowercase()) {
            out.push(t.to_string());
        }
    }
    out
}

/// [`entity_names`] minus anything already found.
pub fn reflected_names(raw: Vec<String>, already_found: &[String], warnings: &mut Vec<String>) -> Vec<String> {
    let found: HashSet<String> = already_found.iter().map(|n| n.trim().to_lowercase()).collect();
    entity_names(raw, warnings)
        .into_iter()
        .filter(|n| {
            let keep = !found.contains(&n.to_lowercase());
            if !keep {
                warnings.push(format!("reflection repeated already-found name {n:?}"));
            }
            keep
        })
        .collect()
}

/// A verdict naming an id outside the offered set becomes `New`.
pub fn verdict(same_as: Option<NodeId>, offered: &[EntityRecord], warnings: &mut Vec<String>) -> DedupVerdict {
    match same_as {
        Some(id) if offered.iter().any(|e| e.id == id) => DedupVerdict::SameAs(id),
        Some(id) => {
            warnings.push(format!("dedup verdict named unoffered id {id}; treated as new"));
            DedupVerdict::New
        }
        None => DedupVerdict::New,
    }
}

pub fn attributes(name: &str, summary: String, tag: Vec<String>, warnings: &mut Vec<String>) -> EntityAttributes {
    let summary = if summary.trim().is_empty() {
        warnings.push(format!("empty summary for {name:?}; using the name"));
        name.to_string()
    } else {
        summary.trim().to_string()
    };
    let (tag, changed) = clamp_tags(&tag);
    if changed {
        warnings.push(format!("tags for {name:?} clipped to limits"));
    }
    EntityAttributes { summary, tag }
}

/// An edge as the model states it: endpoints by name (or id string).
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawEdge {
    pub source: String,
    pub target: String,
    pub fact: String,
    #[serde(default)]
    pub valid_at: Option<String>,
    #[serde(default)]
    pub invalid_at: Option<String>,
}

fn resolve_endpoint(name: &str, entities: &[EntityRecord]) -> Option<NodeId> {
    let n = name.trim();
    let lower = n.to_lowercase();
    entities
        .iter()
        .find(|e| e.name.to_lowercase() == lower)
        .or_else(|| entities.iter().find(|e| e.id.to_string() == n))
        .map(|e| e.id)
}

/// Resolves endpoints against the offered entities and drops drafts that
/// reference anything else, have no fact, or carry an inverted time span.
pub fn edge_drafts(raw: Vec<RawEdge>, entities: &[EntityRecord], warnings: &mut Vec<String>) -> Vec<EdgeDraft> {
    let mut out: Vec<EdgeDraft> = Vec::new();
    let mut seen = HashSet::new();
    for r in raw {
        let (Some(source), Some(target)) = (resolve_endpoint(&r.source, entities), resolve_endpoint(&r.target, entities))
        else {
            warnings.push(format!("dropped edge with unknown endpoint: {:?} -> {:?}", r.source, r.target));
            continue;
        };
        let fact = r.fact.trim().to_string();
        if fact.is_empty() {
            warnings.push("dropped edge with empty fact".into());
            continue;
        }
        let parse = |s: &Option<String>, warnings: &mut Vec<String>| -> Option<Timestamp> {
            let s = s.as_deref()?.trim();
            if s.is_empty() {
                return None;
            }
            match Timestamp::parse(s) {
                Ok(t) => Some(t),
                Err(_) => {
                    warnings.push(format!("ignored unparseable date {s:?}"));
                    None
                }
            }
        };
        let valid_at = parse(&r.valid_at, warnings);
        let invalid_at = parse(&r.invalid_at, warnings);
        if let (Some(a), Some(b)) = (valid_at, invalid_at) {
            if b < a {
                warnings.push(format!("dropped edge {fact:?}: invalid_at precedes valid_at"));
                continue;
            }
        }
        if seen.insert((source, target, normalize_text(&fact))) {
            out.push(EdgeDraft {
                source,
                target,
                fact,
                valid_at,
                invalid_at,
            });
        }
    }
    out
}

pub fn same_edge(a: &EdgeDraft, b: &EdgeDraft) -> bool {
    a.source == b.source && a.target == b.target && normalize_text(&a.fact) == normalize_text(&b.fact)
}

pub fn reflected_edges(drafts: Vec<EdgeDraft>, already_found: &[EdgeDraft], warnings: &mut Vec<String>) -> Vec<EdgeDraft> {
    drafts
        .into_iter()
        .filter(|d| {
            let dup = already_found.iter().any(|f| same_edge(f, d));
            if dup {
                warnings.push(format!("reflection repeated already-found fact {:?}", d.fact));
            }
            !dup
        })
        .collect()
}

/// Checks a categorization against its request. Hard errors: out-of-range
/// index, blank or "and"-joined name, leftover node, Speaker rule broken.
/// Repaired with warnings: repeated indexes, empty categories, same-named
/// categories (merged), oversized tags.
pub fn categorization(
    result: CategorizationResult,
    request: &CategorizeRequest,
    warnings: &mut Vec<String>,
) -> Result<CategorizationResult, String> {
    let n = request.nodes.len();
    let mut merged: Vec<super::CategoryAssignment> = Vec::new();
    for mut cat in result.categories {
        cat.name = cat.name.trim().to_string();
        if cat.name.is_empty() {
            return Err("category name is empty".into());
        }
        if has_and_connector(&cat.name) {
            return Err(format!("category name {:?} uses the word \"and\"", cat.name));
        }
        if let Some(bad) = cat.child_indexes.iter().find(|&&i| i >= n) {
            return Err(format!("category {:?} has index {bad}, but only {n} nodes were given", cat.name));
        }
        if cat.child_indexes.is_empty() {
            warnings.push(format!("dropped empty category {:?}", cat.name));
            continue;
        }
        if let Some(existing) = merged.iter_mut().find(|m| m.name.eq_ignore_ascii_case(&cat.name)) {
            warnings.push(format!("merged repeated category {:?}", cat.name));
            existing.child_indexes.extend(cat.child_indexes);
            existing.tag.extend(cat.tag);
        } else {
            merged.push(cat);
        }
    }
    for cat in &mut merged {
        let set: BTreeSet<usize> = cat.child_indexes.iter().copied().collect();
        if set.len() != cat.child_indexes.len() {
            warnings.push(format!("removed repeated indexes in {:?}", cat.name));
        }
        cat.child_indexes = set.into_iter().collect();
        let (tag, changed) = clamp_tags(&cat.tag);
        if changed {
            warnings.push(format!("tags for category {:?} clipped to limits", cat.name));
        }
        cat.tag = tag;
    }
    let covered: BTreeSet<usize> = merged.iter().flat_map(|c| c.child_indexes.iter().copied()).collect();
    let leftover: Vec<usize> = (0..n).filter(|i| !covered.contains(i)).collect();
    if !leftover.is_empty() {
        return Err(format!("nodes {leftover:?} were not assigned to any category"));
    }
    for (i, node) in request.nodes.iter().enumerate() {
        if is_speaker_alias(&node.name)
            && !merged
                .iter()
                .any(|c| c.name == SPEAKER_CATEGORY && c.child_indexes.contains(&i))
        {
            return Err(format!(
                "node {i} ({:?}) must be in a category named exactly \"{SPEAKER_CATEGORY}\"",
                node.name
            ));
        }
    }
    Ok(CategorizationResult { categories: merged })
}

#[derive(Debug, Clone, Deserialize)]
pub struct RawSelected {
    #[serde(default)]
    pub name: String,
    pub uuid: serde_json::Value,
    #[serde(default)]
    pub get_all_children: bool,
}

/// Every selected uuid must name an offered node; repeats collapse, with the
/// `get_all_children` flags or-ed together.
pub fn selection(raw: Vec<RawSelected>, offered: &[OfferedNode]) -> Result<NodeSelection, String> {
    let mut out: Vec<SelectedNode> = Vec::new();
    for r in raw {
        let id_text = match &r.uuid {
            serde_json::Value::String(s) => s.trim().to_string(),
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(format!("uuid must be a string or number, got {other}")),
        };
        let Some(node) = offered.iter().find(|o| o.id.to_string() == id_text) else {
            return Err(format!("uuid {id_text:?} is not one of the offered nodes"));
        };
        if let Some(prev) = out.iter_mut().find(|s| s.id == node.id) {
            prev.get_all_children |= r.get_all_children;
        } else {
            out.push(SelectedNode {
                name: node.name.clone(),
                id: node.id,
                get_all_children: r.get_all_children,
            });
        }
    }
    Ok(NodeSelection { selected: out })
}

pub fn judge_label(label: i64) -> Result<u8, String> {
    match label {
        0 => Ok(0),
        1 => Ok(1),
        other => Err(format!("label must be 0 or 1, got {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, HashEmbedder};
    use crate::oracle::{CategorizeNode, CategoryAssignment};

    fn req(names: &[&str]) -> CategorizeRequest {
        CategorizeRequest {
            layer: 1,
            nodes: names
                .iter()
                .map(|n| CategorizeNode {
                    name: n.to_string(),
                    description: String::new(),
                })
                .collect(),
            existing_categories: vec![],
            compression_ratio: 2,
            retry: false,
            prev_example: String::new(),
        }
    }

    fn cat(name: &str, idx: &[usize]) -> CategoryAssignment {
        CategoryAssignment {
            name: name.into(),
            child_indexes: idx.to_vec(),
            tag: vec![],
        }
    }

    #[test]
    fn names_dedup_case_insensitively() {
        let mut w = vec![];
        let got = entity_names(vec!["Dave".into(), "dave".into(), " ".into(), "Detroit".into()], &mut w);
        assert_eq!(got, vec!["Dave", "Detroit"]);
    }

    #[test]
    fn reflection_filters_repeats() {
        let mut w = vec![];
        assert!(reflected_names(vec!["DAVE".into()], &["Dave".into()], &mut w).is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn unoffered_verdict_becomes_new() {
        let mut w = vec![];
        assert_eq!(verdict(Some(NodeId(9)), &[], &mut w), DedupVerdict::New);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn categorization_rejects_and_leftover_range_and_speaker() {
        let r = req(&["Poodle", "Persian Cat", "user"]);
        let mut w = vec![];
        let bad_and = CategorizationResult {
            categories: vec![cat("Dogs and Cats", &[0, 1]), cat("Speaker", &[2])],
        };
        assert!(categorization(bad_and, &r, &mut w).is_err());
        let leftover = CategorizationResult {
            categories: vec![cat("Dogs", &[0]), cat("Speaker", &[2])],
        };
        assert!(categorization(leftover, &r, &mut w).unwrap_err().contains("[1]"));
        let range = CategorizationResult {
            categories: vec![cat("Pets", &[0, 1, 3]), cat("Speaker", &[2])],
        };
        assert!(categorization(range, &r, &mut w).is_err());
        let speaker = CategorizationResult {
            categories: vec![cat("Pets", &[0, 1, 2])],
        };
        assert!(categorization(speaker, &r, &mut w).is_err());
        let ok = CategorizationResult {
            categories: vec![cat("Pets", &[1, 0, 0]), cat("pets", &[1]), cat("Speaker", &[2]), cat("Empty", &[])],
        };
        let fixed = categorization(ok, &r, &mut w).unwrap();
        assert_eq!(fixed.categories, vec![cat("Pets", &[0, 1]), cat("Speaker", &[2])]);
    }

    #[test]
    fn selection_rejects_unoffered_uuid() {
        let offered = vec![OfferedNode {
            id: NodeId(4),
            name: "Geography".into(),
            tag: vec![],
            layer: 2,
        }];
        let raw = |u: serde_json::Value| RawSelected {
            name: "x".into(),
            uuid: u,
            get_all_children: false,
        };
        assert!(selection(vec![raw(serde_json::json!("5"))], &offered).is_err());
        let ok = selection(vec![raw(serde_json::json!(4)), raw(serde_json::json!("4"))], &offered).unwrap();
        assert_eq!(ok.selected.len(), 1);
        assert_eq!(ok.selected[0].name, "Geography");
    }

    #[test]
    fn edge_drafts_drop_unknown_endpoints() {
        let emb = HashEmbedder::new(8);
        let ent = |id: u64, name: &str| EntityRecord {
            id: NodeId(id),
            name: name.into(),
            summary: name.into(),
            tag: vec![],
            episode_idx: BTreeSet::new(),
            name_embedding: emb.embed(name).unwrap(),
            summary_embedding: emb.embed(name).unwrap(),
            layer: 0,
        };
        let ents = vec![ent(1, "Dave"), ent(2, "Detroit")];
        let raw = vec![
            RawEdge {
                source: "dave".into(),
                target: "Detroit".into(),
                fact: "Dave attended a conference in Detroit.".into(),
                valid_at: Some("2023-06-10".into()),
                invalid_at: None,
            },
            RawEdge {
                source: "Dave".into(),
                target: "Chicago".into(),
                fact: "x".into(),
                valid_at: None,
                invalid_at: None,
            },
        ];
        let mut w = vec![];
        let got = edge_drafts(raw, &ents, &mut w);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].source, got[0].target), (NodeId(1), NodeId(2)));
        assert_eq!(got[0].valid_at, Some(Timestamp::parse("2023-06-10").unwrap()));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn attributes_clip_tags_and_fill_summary() {
        let mut w = vec![];
        let a = attributes(
            "Son",
            " ".into(),
            vec!["Family member".into(), "very happy little kid".into()],
            &mut w,
        );
        assert_eq!(a.summary, "Son");
        assert_eq!(a.tag, vec!["Family member", "very happy little"]);
        assert_eq!(w.len(), 2);
    }
}
