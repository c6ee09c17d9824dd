//! Oracle backed by an OpenAI-compatible chat-completions endpoint.

use serde::Deserialize;
use serde_json::{json, Value};

use super::prompts::{self, render};
use super::validate::{self, RawEdge, RawSelected};
use super::{
    CategorizationResult, CategorizeRequest, CategoryAssignment, ConceptOracle, DedupVerdict, EdgeDraft,
    EntityAttributes, NodeSelection, OfferedNode, OracleResponse, TokenUsage,
};
use crate::error::{MemoryError, Result};
use crate::model::{EntityRecord, EpisodeRecord, NodeId, RelationEdge};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteSettings {
    pub model: String,
    pub temperature: f64,
}

impl RemoteSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
        }
    }
}

pub struct RemoteOracle {
    transport: Box<dyn super::JsonTransport>,
    settings: RemoteSettings,
}

/// Pulls the first JSON value out of a model reply, skipping code fences and
/// any prose before it.
pub(crate) fn extract_json(text: &str) -> std::result::Result<Value, String> {
    let start = text
        .find(['[', '{'])
        .ok_or_else(|| "reply contains no JSON value".to_string())?;
    let mut values = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    match values.next() {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(format!("reply is not valid JSON: {e}")),
        None => Err("reply contains no JSON value".into()),
    }
}

fn from_value<T: for<'de> Deserialize<'de>>(v: Value) -> std::result::Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("reply does not match the expected shape: {e}"))
}

/// An array reply, also accepted when wrapped in a single-key object.
fn array_of(v: Value) -> std::result::Result<Vec<Value>, String> {
    match v {
        Value::Array(a) => Ok(a),
        Value::Object(map) => map
            .into_iter()
            .find_map(|(_, v)| match v {
                Value::Array(a) => Some(a),
                _ => None,
            })
            .ok_or_else(|| "expected a JSON array".to_string()),
        _ => Err("expected a JSON array".into()),
    }
}

fn render_episodes(eps: &[EpisodeRecord]) -> String {
    if eps.is_empty() {
        return "(none)".into();
    }
    eps.iter()
        .map(|e| format!("[{}] {}", e.valid_at, e.content))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_current(e: &EpisodeRecord) -> String {
    format!("[{}] {}", e.valid_at, e.content)
}

fn render_entities(ents: &[EntityRecord]) -> String {
    ents.iter()
        .map(|e| format!("- {} (id {}): {}", e.name, e.id, e.summary))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_drafts(drafts: &[EdgeDraft], ents: &[EntityRecord]) -> String {
    if drafts.is_empty() {
        return "(none)".into();
    }
    let name = |id: NodeId| {
        ents.iter()
            .find(|e| e.id == id)
            .map_or_else(|| id.to_string(), |e| e.name.clone())
    };
    drafts
        .iter()
        .map(|d| format!("- {} -> {}: {}", name(d.source), name(d.target), d.fact))
        .collect::<Vec<_>>()
        .join("\n")
}

impl RemoteOracle {
    pub fn new(transport: Box<dyn super::JsonTransport>, settings: RemoteSettings) -> Self {
        Self { transport, settings }
    }

    fn chat(&self, messages: &[Value]) -> Result<(String, TokenUsage)> {
        let body = json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": self.settings.temperature,
        });
        let resp = self.transport.post_json("chat/completions", &body)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| MemoryError::OracleFormat("chat response has no choices[0].message.content".into()))?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: resp.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: resp.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        Ok((text, usage))
    }

    /// One request plus at most one repair reprompt carrying the validation
    /// error. A second failure is an `OracleFormat` error.
    fn ask<T>(
        &self,
        system: Option<String>,
        user: String,
        parse: impl Fn(&str, &mut Vec<String>) -> std::result::Result<T, String>,
    ) -> Result<OracleResponse<T>> {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(json!({ "role": "system", "content": s }));
        }
        messages.push(json!({ "role": "user", "content": user }));
        let mut usage = TokenUsage::default();
        let (raw, u) = self.chat(&messages)?;
        usage.add(u);
        let mut warnings = Vec::new();
        let err = match parse(&raw, &mut warnings) {
            Ok(payload) => {
                return Ok(OracleResponse {
                    raw_text: raw,
                    payload,
                    usage,
                    warnings,
                })
            }
            Err(e) => e,
        };
        log::warn!("oracle reply failed validation, reprompting: {err}");
        messages.push(json!({ "role": "assistant", "content": raw }));
        messages.push(json!({ "role": "user", "content": render(prompts::REPAIR, &[("error", &err)]) }));
        let (raw, u) = self.chat(&messages)?;
        usage.add(u);
        let mut warnings = Vec::new();
        match parse(&raw, &mut warnings) {
            Ok(payload) => Ok(OracleResponse {
                raw_text: raw,
                payload,
                usage,
                warnings,
            }),
            Err(e) => Err(MemoryError::OracleFormat(e)),
        }
    }
}

fn parse_names(raw: &str) -> std::result::Result<Vec<String>, String> {
    from_value::<Vec<String>>(Value::Array(array_of(extract_json(raw)?)?))
}

fn parse_edges(raw: &str) -> std::result::Result<Vec<RawEdge>, String> {
    from_value::<Vec<RawEdge>>(Value::Array(array_of(extract_json(raw)?)?))
}

impl ConceptOracle for RemoteOracle {
    fn extract_entity_names(&self, current: &EpisodeRecord, recent: &[EpisodeRecord]) -> Result<OracleResponse<Vec<String>>> {
        let prompt = render(
            prompts::EXTRACT_NAMES,
            &[("recent", &render_episodes(recent)), ("current", &render_current(current))],
        );
        self.ask(None, prompt, |raw, w| Ok(validate::entity_names(parse_names(raw)?, w)))
    }

    fn reflect_missing_names(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        already_found: &[String],
    ) -> Result<OracleResponse<Vec<String>>> {
        let found = serde_json::to_string(already_found)?;
        let prompt = render(
            prompts::REFLECT_NAMES,
            &[
                ("found", &found),
                ("recent", &render_episodes(recent)),
                ("current", &render_current(current)),
            ],
        );
        self.ask(None, prompt, |raw, w| Ok(validate::reflected_names(parse_names(raw)?, already_found, w)))
    }

    fn resolve_duplicates(&self, candidate_name: &str, matched_existing: &[EntityRecord]) -> Result<OracleResponse<DedupVerdict>> {
        if matched_existing.is_empty() {
            return Ok(OracleResponse {
                raw_text: String::new(),
                payload: DedupVerdict::New,
                usage: TokenUsage::default(),
                warnings: Vec::new(),
            });
        }
        let prompt = render(
            prompts::RESOLVE_ENTITY,
            &[("candidate", candidate_name), ("existing", &render_entities(matched_existing))],
        );
        self.ask(None, prompt, |raw, w| {
            let v = extract_json(raw)?;
            let same = match v.get("same_as") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) if s.trim().eq_ignore_ascii_case("new") => None,
                Some(Value::String(s)) => Some(s.parse::<NodeId>().map_err(|e| e.to_string())?),
                Some(Value::Number(n)) => Some(NodeId(n.as_u64().ok_or("same_as must be a non-negative id")?)),
                Some(other) => return Err(format!("same_as has unexpected value {other}")),
            };
            Ok(validate::verdict(same, matched_existing, w))
        })
    }

    fn extract_entity_attributes(
        &self,
        name: &str,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
    ) -> Result<OracleResponse<EntityAttributes>> {
        let prompt = render(
            prompts::ENTITY_ATTRIBUTES,
            &[
                ("name", name),
                ("recent", &render_episodes(recent)),
                ("current", &render_current(current)),
            ],
        );
        self.ask(None, prompt, |raw, w| {
            #[derive(Deserialize)]
            struct Raw {
                #[serde(default)]
                summary: String,
                #[serde(default)]
                tag: Vec<String>,
            }
            let r: Raw = from_value(extract_json(raw)?)?;
            Ok(validate::attributes(name, r.summary, r.tag, w))
        })
    }

    fn extract_edges(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        entities: &[EntityRecord],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>> {
        let prompt = render(
            prompts::EXTRACT_EDGES,
            &[
                ("entities", &render_entities(entities)),
                ("recent", &render_episodes(recent)),
                ("current", &render_current(current)),
            ],
        );
        self.ask(None, prompt, |raw, w| Ok(validate::edge_drafts(parse_edges(raw)?, entities, w)))
    }

    fn reflect_missing_edges(
        &self,
        current: &EpisodeRecord,
        recent: &[EpisodeRecord],
        entities: &[EntityRecord],
        already_found: &[EdgeDraft],
    ) -> Result<OracleResponse<Vec<EdgeDraft>>> {
        let prompt = render(
            prompts::REFLECT_EDGES,
            &[
                ("found", &render_drafts(already_found, entities)),
                ("entities", &render_entities(entities)),
                ("recent", &render_episodes(recent)),
                ("current", &render_current(current)),
            ],
        );
        self.ask(None, prompt, |raw, w| {
            let drafts = validate::edge_drafts(parse_edges(raw)?, entities, w);
            Ok(validate::reflected_edges(drafts, already_found, w))
        })
    }

    fn resolve_edge_duplicate(&self, existing: &RelationEdge, candidate: &EdgeDraft) -> Result<OracleResponse<bool>> {
        let prompt = render(
            prompts::RESOLVE_EDGE,
            &[("existing", &existing.fact), ("candidate", &candidate.fact)],
        );
        self.ask(None, prompt, |raw, _| {
            extract_json(raw)?
                .get("duplicate")
                .and_then(Value::as_bool)
                .ok_or_else(|| "expected {\"duplicate\": true|false}".to_string())
        })
    }

    fn categorize_nodes(&self, request: &CategorizeRequest) -> Result<OracleResponse<CategorizationResult>> {
        let content = request
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{i}. {}: [{}]", n.name, n.description))
            .collect::<Vec<_>>()
            .join("\n");
        let existing = if request.existing_categories.is_empty() {
            "(none)".to_string()
        } else {
            request
                .existing_categories
                .iter()
                .map(|(n, d)| format!("- {n}: {d}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let layer = request.layer.to_string();
        let prev_layer = request.layer.saturating_sub(1).to_string();
        let guidance = render(
            prompts::CATEGORIZE_GUIDANCE,
            &[
                ("layer", &layer),
                ("prev_layer", &prev_layer),
                ("prev_example", &request.prev_example),
            ],
        );
        let user = render(
            prompts::CATEGORIZE_USER,
            &[
                ("nodes", &content),
                ("existing", &existing),
                ("guidance", &guidance),
            ],
        );
        let system = render(prompts::CATEGORIZE_SYSTEM, &[]);
        self.ask(Some(system), user, |raw, w| {
            #[derive(Deserialize)]
            struct Raw {
                category: String,
                indexes: Vec<usize>,
                #[serde(default)]
                tag: Vec<String>,
            }
            let items: Vec<Raw> = from_value(Value::Array(array_of(extract_json(raw)?)?))?;
            let result = CategorizationResult {
                categories: items
                    .into_iter()
                    .map(|r| CategoryAssignment {
                        name: r.category,
                        child_indexes: r.indexes,
                        tag: r.tag,
                    })
                    .collect(),
            };
            validate::categorization(result, request, w)
        })
    }

    fn select_nodes(&self, query: &str, offered: &[OfferedNode]) -> Result<OracleResponse<NodeSelection>> {
        let nodes_info = offered
            .iter()
            .map(|o| format!("- name: {}, uuid: {}, layer: {}, tags: {:?}", o.name, o.id, o.layer, o.tag))
            .collect::<Vec<_>>()
            .join("\n");
        let mut prompt = render(prompts::NODE_SELECTION, &[("query", query), ("nodes_info", &nodes_info)]);
        prompt.push_str(&render(prompts::SELECTION_FORMAT, &[]));
        self.ask(None, prompt, |raw, _| {
            let items: Vec<RawSelected> = from_value(Value::Array(array_of(extract_json(raw)?)?))?;
            validate::selection(items, offered)
        })
    }

    fn answer(&self, query: &str, context: &str) -> Result<OracleResponse<String>> {
        let prompt = render(prompts::ANSWER, &[("context", context), ("query", query)]);
        self.ask(None, prompt, |raw, _| {
            let t = raw.trim();
            if t.is_empty() {
                Err("the answer was empty".into())
            } else {
                Ok(t.to_string())
            }
        })
    }

    fn judge(&self, question: &str, gold: &str, predicted: &str) -> Result<OracleResponse<u8>> {
        let prompt = render(
            prompts::JUDGE,
            &[("question", question), ("gold", gold), ("predicted", predicted)],
        );
        self.ask(None, prompt, |raw, _| {
            let label = extract_json(raw)?
                .get("label")
                .and_then(Value::as_i64)
                .ok_or_else(|| "expected {\"label\": 0|1}".to_string())?;
            validate::judge_label(label)
        })
    }
}
