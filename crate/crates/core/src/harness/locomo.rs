//! Adapter for LoCoMo-style multi-session conversation files.
//!
//! A file holds a list of samples. Each sample has a `conversation` object
//! with `speaker_a`, `speaker_b`, numbered `session_N` turn lists and their
//! `session_N_date_time` stamps (`"1:56 pm on 8 May, 2023"`), plus a `qa`
//! list. Turns inside a session get one-second offsets from the session
//! stamp so their order survives as timestamps.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::Deserialize;
use serde_json::Value;

use super::eval::EvalCase;
use crate::error::{MemoryError, Result};
use crate::ingest::Message;
use crate::model::Timestamp;

const DATE_FORMAT: &str = "%I:%M %p on %d %B, %Y";

/// Gold answer used for adversarial questions that carry none.
pub const ADVERSARIAL_GOLD: &str = "Not mentioned in the conversation";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocomoSample {
    pub sample_id: String,
    pub messages: Vec<Message>,
    pub cases: Vec<EvalCase>,
}

#[derive(Deserialize)]
struct RawSample {
    #[serde(default)]
    sample_id: Option<String>,
    conversation: BTreeMap<String, Value>,
    #[serde(default)]
    qa: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    text: String,
    #[serde(default)]
    blip_caption: Option<String>,
}

#[derive(Deserialize)]
struct RawQa {
    question: String,
    #[serde(default)]
    answer: Option<Value>,
    category: u8,
}

pub fn category_label(code: u8) -> Option<&'static str> {
    match code {
        1 => Some("multi-hop"),
        2 => Some("temporal"),
        3 => Some("open-domain"),
        4 => Some("single-hop"),
        5 => Some("adversarial"),
        _ => None,
    }
}

pub fn parse_session_date(s: &str) -> Result<Timestamp> {
    NaiveDateTime::parse_from_str(s.trim(), DATE_FORMAT)
        .map(|dt| Timestamp::from_datetime(dt.and_utc()))
        .map_err(|e| MemoryError::Data(format!("bad session date {s:?}: {e}")))
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) if s.trim().is_empty() => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

pub fn parse(text: &str) -> Result<Vec<LocomoSample>> {
    let value: Value = serde_json::from_str(text).map_err(|e| MemoryError::Data(format!("LoCoMo file: {e}")))?;
    let raw: Vec<RawSample> = match value {
        Value::Array(_) => serde_json::from_value(value),
        obj => serde_json::from_value(obj).map(|s| vec![s]),
    }
    .map_err(|e| MemoryError::Data(format!("LoCoMo file: {e}")))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, s)| convert(s, i))
        .collect()
}

fn convert(s: RawSample, index: usize) -> Result<LocomoSample> {
    let sample_id = s.sample_id.unwrap_or_else(|| format!("sample-{index}"));
    let mut sessions: Vec<(u32, &Value)> = s
        .conversation
        .iter()
        .filter_map(|(k, v)| {
            let n = k.strip_prefix("session_")?.parse::<u32>().ok()?;
            Some((n, v))
        })
        .collect();
    sessions.sort_by_key(|(n, _)| *n);

    let mut messages = Vec::new();
    for (n, turns) in sessions {
        let stamp_key = format!("session_{n}_date_time");
        let stamp = s
            .conversation
            .get(&stamp_key)
            .and_then(Value::as_str)
            .ok_or_else(|| MemoryError::Data(format!("{sample_id}: missing {stamp_key}")))?;
        let start = parse_session_date(stamp)?;
        let turns: Vec<RawTurn> = serde_json::from_value(turns.clone())
            .map_err(|e| MemoryError::Data(format!("{sample_id} session_{n}: {e}")))?;
        for (i, t) in turns.into_iter().enumerate() {
            let text = match t.blip_caption.filter(|c| !c.trim().is_empty()) {
                Some(c) => format!("{} [shares an image: {c}]", t.text),
                None => t.text,
            };
            messages.push(Message {
                speaker: t.speaker,
                text,
                timestamp: Timestamp::from_unix(start.unix() + i as i64)?,
                session_id: format!("{sample_id}/session_{n}"),
            });
        }
    }

    let mut cases = Vec::new();
    for q in s.qa {
        let category = category_label(q.category)
            .ok_or_else(|| MemoryError::Data(format!("{sample_id}: unknown QA category {}", q.category)))?;
        let gold = q
            .answer
            .as_ref()
            .and_then(value_text)
            .or_else(|| (q.category == 5).then(|| ADVERSARIAL_GOLD.to_string()));
        let Some(gold) = gold else {
            return Err(MemoryError::Data(format!("{sample_id}: question {:?} has no answer", q.question)));
        };
        cases.push(EvalCase {
            question: q.question,
            gold_answer: gold,
            category: category.to_string(),
            scope: Some(sample_id.clone()),
        });
    }
    Ok(LocomoSample {
        sample_id,
        messages,
        cases,
    })
}
