//! Corpus and eval-case files.
//!
//! Messages come as line-delimited JSON, one
//! `{"speaker", "text", "timestamp", "session_id"}` object per line, or as a
//! LoCoMo-style JSON document. Eval cases come as line-delimited
//! `{"question", "gold_answer", "category"}` objects or from the `qa` lists
//! of a LoCoMo document. Blank lines are skipped; any other bad line is a
//! data error naming its line number.

use std::path::Path;

use serde::de::DeserializeOwned;

use super::eval::EvalCase;
use super::locomo::{self, LocomoSample};
use crate::error::{MemoryError, Result};
use crate::ingest::Message;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MemoryError::Data(format!("cannot read {}: {e}", path.display())))
}

/// A LoCoMo document is a JSON array, or a single object with a
/// `conversation` key; anything else is treated as line-delimited JSON.
fn looks_like_locomo(text: &str) -> bool {
    let t = text.trim_start();
    if t.starts_with('[') {
        return true;
    }
    if !t.starts_with('{') {
        return false;
    }
    let first_line = t.lines().next().unwrap_or("");
    serde_json::from_str::<serde_json::Value>(first_line).is_err()
        || serde_json::from_str::<serde_json::Value>(t)
            .ok()
            .and_then(|v| v.get("conversation").cloned())
            .is_some()
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| MemoryError::Data(format!("{what} line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn pick_sample(samples: Vec<LocomoSample>, sample: Option<&str>) -> Result<LocomoSample> {
    match sample {
        Some(id) => samples
            .into_iter()
            .find(|s| s.sample_id == id)
            .ok_or_else(|| MemoryError::NotFound(format!("LoCoMo sample {id:?}"))),
        None if samples.len() == 1 => Ok(samples.into_iter().next().unwrap()),
        None => Err(MemoryError::InvalidArgument(format!(
            "file holds {} conversations; choose one with --sample ({})",
            samples.len(),
            samples.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

pub fn load_messages(path: &Path, sample: Option<&str>) -> Result<Vec<Message>> {
    let text = read(path)?;
    if looks_like_locomo(&text) {
        return Ok(pick_sample(locomo::parse(&text)?, sample)?.messages);
    }
    parse_jsonl(&text, "corpus")
}

pub fn load_cases(path: &Path, sample: Option<&str>) -> Result<Vec<EvalCase>> {
    let text = read(path)?;
    let cases: Vec<EvalCase> = if looks_like_locomo(&text) {
        pick_sample(locomo::parse(&text)?, sample)?.cases
    } else {
        parse_jsonl(&text, "cases")?
    };
    for (i, c) in cases.iter().enumerate() {
        c.validate().map_err(|m| MemoryError::Data(format!("case {}: {m}", i + 1)))?;
    }
    Ok(cases)
}
