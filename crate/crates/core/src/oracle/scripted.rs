//! Deterministic oracle driven by a JSON fixture. Every answer is a pure
//! function of the request and the fixture, which is what the test suites
//! and the offline CLI rely on.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::validate::{self, RawEdge, RawSelected};
use super::{
    is_speaker_alias, CategorizationResult, CategorizeRequest, CategoryAssignment, ConceptOracle, DedupVerdict,
    EdgeDraft, EntityAttributes, NodeSelection, OfferedNode, OracleResponse, TokenUsage, INSUFFICIENT_MEMORY,
    SPEAKER_CATEGORY,
};
use crate::error::{MemoryError, Result};
use crate::index::tokenize;
use crate::model::{EntityRecord, EpisodeRecord, RelationEdge};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconTerm {
    pub name: String,
    pub aliases: Vec<String>,
    pub summary: Option<String>,
    pub tags: Vec<String>,
    /// Left out of the first extraction pass and returned by reflection.
    pub withhold_first_pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationFixture {
    pub source: String,
    pub target: String,
    pub fact: String,
    pub valid_at: Option<String>,
    pub invalid_at: Option<String>,
    pub withhold_first_pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomyEntry {
    pub name: String,
    /// Node names grouped under this category.
    pub children: Vec<String>,
    pub tags: Vec<String>,
    /// Restricts the entry to one layer.
    pub layer: Option<u32>,
    /// Used only on the retry pass over undersized remainders.
    pub retry: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionRule {
    /// Fires when any keyword phrase occurs in the query.
    pub keywords: Vec<String>,
    pub select: Vec<String>,
    /// Selected with `get_all_children = true`.
    pub all_children: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedFixture {
    pub lexicon: Vec<LexiconTerm>,
    pub relations: Vec<RelationFixture>,
    /// Turns off the per-sentence co-occurrence edge rule.
    pub disable_cooccurrence: bool,
    pub taxonomy: Vec<TaxonomyEntry>,
    pub selection: Vec<SelectionRule>,
}

pub struct ScriptedOracle {
    fixture: ScriptedFixture,
    /// Tokenized surface forms per lexicon term, name first.
    forms: Vec<Vec<Vec<String>>>,
}

fn contains_phrase(hay: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && hay.windows(phrase.len()).any(|w| w == phrase)
}

fn first_position(hay: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() {
        return None;
    }
    hay.windows(phrase.len()).position(|w| w == phrase)
}

/// Splits after `.`, `!` or `?` followed by whitespace or end of text.
fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

fn respond<T>(raw: serde_json::Value, payload: T, warnings: Vec<String>) -> OracleResponse<T> {
    OracleResponse {
        raw_text: raw.to_string(),
        payload,
        usage: TokenUsage::default(),
        warnings,
    }
}

impl ScriptedOracle {
    pub fn new(fixture: ScriptedFixture) -> Self {
        let forms = fixture
            .lexicon
            .iter()
            .map(|t| {
                std::iter::once(&t.name)
                    .chain(t.aliases.iter())
                    .map(|f| tokenize(f))
                    .collect()
            })
            .collect();
        Self { fixture, forms }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fixture: ScriptedFixture =
            serde_json::from_str(text).map_err(|e| MemoryError::Config(format!("scripted fixture: {e}")))?;
        Ok(Self::new(fixture))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MemoryError::Config(format!("cannot read scripted fixture {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn fixture(&self) -> &ScriptedFixture {
        &self.fixture
    }

    /// Lexicon term whose name or an alias equals `name`.
    fn term_of(&self, name: &str) -> Option<usize> {
        let t = tokenize(name);
        if t.is_empty() {
            return None;
        }
        self.forms.iter().position(|forms| forms.iter().any(|f| *f == t))
    }

    /// Surface form of term `i` found in `tokens`, name checked first.
    fn surface_in(&self, i: usize, tokens: &[String]) -> Option<String> {
        let term = &self.fixture.lexicon[i];
        std::iter::once(&term.name)
            .chain(term.aliases.iter())
            .zip(&self.forms[i])
            .find(|(_, f)| contains_phrase(tokens, f))
            .map(|(s, _)| s.clone())
    }

    fn scan_names(&self, text: &str, withheld: bool) -> Vec<String> {
        let tokens = tokenize(text);
        (0..self.fixture.lexicon.len())
            .filter(|&i| self.fixture.lexicon[i].withhold_first_pass == withheld)
            .filter_map(|i| self.surface_in(i, &tokens))
            .collect()
    }

    /// Tokenized forms by which an offered entity can be mentioned.
    fn entity_forms(&self, e: &EntityRecord) -> Vec<Vec<String>> {
        let mut forms = vec![tokenize(&e.name)];
        if let Some(i) = self.term_of(&e.name) {
            forms.extend(self.forms[i].iter().cloned());
        }
        forms
    }

    fn entity_for(&self, name: &str, entities: &[EntityRecord]) -> Option<usize> {
        let t = tokenize(name);
        let term = self.term_of(name);
        entities.iter().position(|e| {
            tokenize(&e.name) == t || (term.is_some() && self.term_of(&e.name) == term)
        })
    }

    fn explicit_relations(&self, text: &str, entities: &[EntityRecord], withheld: bool) -> Vec<RawEdge> {
        let tokens = tokenize(text);
        let mut out = Vec::new();
        for r in &self.fixture.relations {
            if r.withhold_first_pass != withheld {
                continue;
            }
            let (Some(s), Some(t)) = (self.entity_for(&r.source, entities), self.entity_for(&r.target, entities)) else {
                continue;
            };
            let mentioned = |i: usize| self.entity_forms(&entities[i]).iter().any(|f| contains_phrase(&tokens, f));
            if mentioned(s) && mentioned(t) {
                out.push(RawEdge {
                    source: entities[s].name.clone(),
                    target: entities[t].name.clone(),
                    fact: r.fact.clone(),
                    valid_at: r.valid_at.clone(),
                    invalid_at: r.invalid_at.clone(),
                });
            }
        }
        out
    }

    fn covered_pairs(&self, entities: &[EntityRecord]) -> BTreeSet<(usize, usize)> {
        self.fixture
            .relations
            .iter()
            .filter_map(|r| {
                let s = self.entity_for(&r.source, entities)?;
                let t = self.entity_for(&r.target, entities)?;
                Some((s.min(t), s.max(t)))
            })
            .collect()
    }

    /// Per sentence: the first mentioned entity (the speaker if the episode
    /// has a `speaker: ` prefix naming an offered entity) is linked to every
    /// other entity mentioned, with the sentence as the fact.
    fn cooccurrence(&self, content: &str, entities: &[EntityRecord]) -> Vec<RawEdge> {
        if self.fixture.disable_cooccurrence {
            return Vec::new();
        }
        let covered = self.covered_pairs(entities);
        let (speaker, body) = match content.split_once(": ") {
            Some((head, rest)) => match self.entity_for(head, entities) {
                Some(i) => (Some(i), rest),
                None => (None, content),
            },
            None => (None, content),
        };
        let forms: Vec<Vec<Vec<String>>> = entities.iter().map(|e| self.entity_forms(e)).collect();
        let mut out = Vec::new();
        for sentence in sentences(body) {
            let tokens = tokenize(&sentence);
            let mut mentioned: Vec<(usize, usize)> = forms
                .iter()
                .enumerate()
                .filter_map(|(i, fs)| fs.iter().filter_map(|f| first_position(&tokens, f)).min().map(|p| (p, i)))
                .collect();
            mentioned.sort_by_key(|&(p, i)| (p, entities[i].id));
            let mut order: Vec<usize> = mentioned.into_iter().map(|(_, i)| i).collect();
            if let Some(s) = speaker {
                if !order.contains(&s) {
                    order.insert(0, s);
                }
            }
            let Some((&head, rest)) = order.split_first() else {
                continue;
            };
            for &other in rest {
                if covered.contains(&(head.min(other), head.max(other))) {
                    continue;
                }
                out.push(RawEdge {
                    source: entities[head].name.clone(),
                    target: entities[other].name.clone(),
                    fact: sentence.clone(),
                    valid_at: None,
                    invalid_at: None,
                });
            }
        }
        out
    }

    fn edges_json(edges: &[RawEdge]) -> serde_json::Value {
        json!(edges
            .iter()
            .map(|e| json!({
                "source": e.source,
                "target": e.target,
                "fact": e.fact,
                "valid_at": e.valid_at,
                "invalid_at": e.invalid_at,
            }))
            .collect::<Vec<_>>())
    }
}

impl ConceptOracle for ScriptedOracle {
    fn extract_entity_names(&self, current: &EpisodeRecord, _recent: &[EpisodeRecord]) -> Result<OracleResponse<Vec<String>>> {
        let raw = self.scan_names(&current.content, false);
        let mut warnings = Vec::new();
        let names = validate::entity_names(raw.clone(), &mut warnings);
        Ok(respond(json!(raw), names, warnings))
    }

    fn reflect_missing_names(
        &self,
        current: &EpisodeRecord,
        _recent: &[EpisodeRecord],
        already_found: &[String],
    ) -> Result<OracleResponse<Vec<String>>> {
        let raw = self.scan_names(&current.content, true);
        let mut warnings = Vec::new();
        let names = validate::reflected_names(raw.clone(), already_found, &mut warnings);
        Ok(respond(json!(raw), names, warnings))
    }

    fn resolve_duplicates(&self, candidate_name: &str, matched_existing: &[EntityRecord]) -> Result<OracleResponse<DedupVerdict>> {
        let cand = tokenize(candidate_name);
        let term = self.term_of(candidate_name);
        let hit = matched_existing
            .iter()
            .find(|e| tokenize(&e.name) == cand || (term.is_some() && self.term_of(&e.name) == term))
            .map(|e| e.id);
        let mut warnings = Vec::new();
        let v = validate::verdict(hit, matched_existing, &mut warnings);
        Ok(respond(json!({ "same_as": hit.map(|i| i.to_string()) }), v, warnings))
    }

    fn extract_entity_attributes(
        &self,
        name: &str,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
    ) -> Result<OracleResponse<EntityAttributes>> {
        let term = self.term_of(name).map(|i| &self.fixture.lexicon[i]);
        let context_empty = current.content.trim().is_empty() && recent.iter().all(|r| r.content.trim().is_empty());
        let summary = match term.and_then(|t| t.summary.clone()) {
            Some(s) => s,
            None if context_empty => name.to_string(),
            None => format!("mentioned in episode {}", current.id),
        };
        let tags = term.map(|t| t.tags.clone()).unwrap_or_default();
        let raw = json!({ "summary": summary, "tag": tags });
        let mut warnings = Vec::new();
        let attrs = validate::attributes(name, summary, tags, &mut warnings);
        Ok(respond(raw, attrs, warnings))
    }

    fn extract_edges(
        &self,
        current: &EpisodeRecord,
        _recent: &[EpisodeRecord],
        entities: &[EntityRecord],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>> {
        let mut raw = self.explicit_relations(&current.content, entities, false);
        raw.extend(self.cooccurrence(&current.content, entities));
        let mut warnings = Vec::new();
        let drafts = validate::edge_drafts(raw.clone(), entities, &mut warnings);
        Ok(respond(Self::edges_json(&raw), drafts, warnings))
    }

    fn reflect_missing_edges(
        &self,
        current: &EpisodeRecord,
        _recent: &[EpisodeRecord],
        entities: &[EntityRecord],
        already_found: &[EdgeDraft],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>> {
        let raw = self.explicit_relations(&current.content, entities, true);
        let mut warnings = Vec::new();
        let drafts = validate::edge_drafts(raw.clone(), entities, &mut warnings);
        let drafts = validate::reflected_edges(drafts, already_found, &mut warnings);
        Ok(respond(Self::edges_json(&raw), drafts, warnings))
    }

    fn resolve_edge_duplicate(&self, existing: &RelationEdge, candidate: &EdgeDraft) -> Result<OracleResponse<bool>> {
        let dup = validate::normalize_text(&existing.fact) == validate::normalize_text(&candidate.fact);
        Ok(respond(json!({ "duplicate": dup }), dup, Vec::new()))
    }

    fn categorize_nodes(&self, request: &CategorizeRequest) -> Result<OracleResponse<CategorizationResult>> {
        let names: Vec<Vec<String>> = request.nodes.iter().map(|n| tokenize(&n.name)).collect();
        let mut cats: Vec<CategoryAssignment> = Vec::new();
        for entry in &self.fixture.taxonomy {
            if entry.retry != request.retry || entry.layer.is_some_and(|l| l != request.layer) {
                continue;
            }
            let children: Vec<Vec<String>> = entry.children.iter().map(|c| tokenize(c)).collect();
            let idx: Vec<usize> = names
                .iter()
                .enumerate()
                .filter(|(_, n)| !n.is_empty() && children.contains(n))
                .map(|(i, _)| i)
                .collect();
            if !idx.is_empty() {
                cats.push(CategoryAssignment {
                    name: entry.name.clone(),
                    child_indexes: idx,
                    tag: entry.tags.clone(),
                });
            }
        }
        let speakers: Vec<usize> = request
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| is_speaker_alias(&n.name))
            .map(|(i, _)| i)
            .collect();
        if !speakers.is_empty() {
            cats.push(CategoryAssignment {
                name: SPEAKER_CATEGORY.to_string(),
                child_indexes: speakers,
                tag: vec![],
            });
        }
        let covered: BTreeSet<usize> = cats.iter().flat_map(|c| c.child_indexes.iter().copied()).collect();
        for (i, node) in request.nodes.iter().enumerate() {
            if !covered.contains(&i) {
                cats.push(CategoryAssignment {
                    name: singleton_name(&node.name),
                    child_indexes: vec![i],
                    tag: vec![],
                });
            }
        }
        let raw = json!(cats
            .iter()
            .map(|c| json!({ "category": c.name, "indexes": c.child_indexes, "tag": c.tag }))
            .collect::<Vec<_>>());
        let mut warnings = Vec::new();
        let result = validate::categorization(CategorizationResult { categories: cats }, request, &mut warnings)
            .map_err(MemoryError::OracleFormat)?;
        Ok(respond(raw, result, warnings))
    }

    fn select_nodes(&self, query: &str, offered: &[OfferedNode]) -> Result<OracleResponse<NodeSelection>> {
        let q = tokenize(query);
        let mut select: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut all: BTreeSet<Vec<String>> = BTreeSet::new();
        for rule in &self.fixture.selection {
            if rule.keywords.iter().any(|k| contains_phrase(&q, &tokenize(k))) {
                select.extend(rule.select.iter().map(|s| tokenize(s)));
                all.extend(rule.all_children.iter().map(|s| tokenize(s)));
            }
        }
        let raw: Vec<RawSelected> = offered
            .iter()
            .filter_map(|o| {
                let n = tokenize(&o.name);
                let full = all.contains(&n);
                (full || select.contains(&n)).then(|| RawSelected {
                    name: o.name.clone(),
                    uuid: json!(o.id.to_string()),
                    get_all_children: full,
                })
            })
            .collect();
        let raw_json = json!(raw
            .iter()
            .map(|r| json!({ "name": r.name, "uuid": r.uuid, "get_all_children": r.get_all_children }))
            .collect::<Vec<_>>());
        let sel = validate::selection(raw, offered).map_err(MemoryError::OracleFormat)?;
        Ok(respond(raw_json, sel, Vec::new()))
    }

    /// Echoes the first evidence line of the context, or the sentinel when
    /// there is none.
    fn answer(&self, _query: &str, context: &str) -> Result<OracleResponse<String>> {
        let line = context
            .lines()
            .find_map(|l| l.strip_prefix("- "))
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .unwrap_or(INSUFFICIENT_MEMORY)
            .to_string();
        Ok(OracleResponse {
            raw_text: line.clone(),
            payload: line,
            usage: TokenUsage::default(),
            warnings: Vec::new(),
        })
    }

    fn judge(&self, _question: &str, gold: &str, predicted: &str) -> Result<OracleResponse<u8>> {
        let g = validate::normalize_text(gold);
        let p = validate::normalize_text(predicted);
        let label = u8::from(!g.is_empty() && format!(" {p} ").contains(&format!(" {g} ")));
        Ok(respond(json!({ "label": label }), label, Vec::new()))
    }
}

/// A node's own name, usable as a category name.
fn singleton_name(name: &str) -> String {
    name.split(' ')
        .map(|w| if w.eq_ignore_ascii_case("and") { "&" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}
