//! Question-answering evaluation with a binary judge.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MemoryError, Result};
use crate::oracle::ConceptOracle;
use crate::retrieval::{RetrievalMode, Retriever, SearchBudget};

pub const ADVERSARIAL: &str = "adversarial";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    pub question: String,
    #[serde(alias = "answer")]
    pub gold_answer: String,
    pub category: String,
    /// Conversation the question belongs to, when the source has several.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

impl EvalCase {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.gold_answer.trim().is_empty() {
            return Err("gold answer is empty".into());
        }
        Ok(())
    }

    pub fn is_adversarial(&self) -> bool {
        self.category.eq_ignore_ascii_case(ADVERSARIAL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvalOptions {
    pub mode: RetrievalMode,
    pub k: usize,
    pub include_adversarial: bool,
    pub parallelism: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CategoryScore {
    pub count: usize,
    pub correct: usize,
    /// Mean judge score as a percentage.
    pub score: f64,
}

impl CategoryScore {
    fn add(&mut self, s: u8) {
        self.count += 1;
        self.correct += s as usize;
        self.score = 100.0 * self.correct as f64 / self.count as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceSummary {
    pub selection_calls: usize,
    pub episodes: usize,
    pub entities: usize,
    pub edges: usize,
    pub system2_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub index: usize,
    pub question: String,
    pub gold_answer: String,
    pub category: String,
    pub prediction: String,
    pub score: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub hierarchy_generation: u64,
    pub categories: BTreeMap<String, CategoryScore>,
    pub overall: CategoryScore,
    pub excluded: usize,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    /// Fixed-width per-category table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<14} {:>6} {:>8} {:>8}\n", "category", "count", "correct", "score");
        for (name, c) in self.categories.iter().chain(std::iter::once((&"overall".to_string(), &self.overall))) {
            out.push_str(&format!("{:<14} {:>6} {:>8} {:>8.2}\n", name, c.count, c.correct, c.score));
        }
        if self.excluded > 0 {
            out.push_str(&format!("({} adversarial cases excluded)\n", self.excluded));
        }
        out
    }
}

fn run_case(retriever: &Retriever<'_>, oracle: &dyn ConceptOracle, case: &EvalCase, index: usize, opts: &EvalOptions) -> Result<CaseRecord> {
    let budget = SearchBudget::new(opts.k)?;
    let mut record = CaseRecord {
        index,
        question: case.question.clone(),
        gold_answer: case.gold_answer.clone(),
        category: case.category.clone(),
        prediction: String::new(),
        score: 0,
        error: None,
        trace: None,
    };
    let answer = match retriever.answer_query(&case.question, budget, opts.mode) {
        Ok(a) => a,
        Err(f) => {
            record.error = Some(f.error.to_string());
            return Ok(record);
        }
    };
    record.trace = Some(TraceSummary {
        selection_calls: answer.trace.oracle_calls.selection,
        episodes: answer.evidence.episodes.len(),
        entities: answer.evidence.entities.len(),
        edges: answer.evidence.edges.len(),
        system2_items: answer
            .trace
            .system2
            .as_ref()
            .map(|s| s.episodes.len() + s.entities.len() + s.edges.len())
            .unwrap_or(0),
    });
    record.prediction = answer.answer;
    match oracle.judge(&case.question, &case.gold_answer, &record.prediction) {
        Ok(r) => record.score = r.payload.min(1),
        Err(e) => record.error = Some(format!("judge failed: {e}")),
    }
    Ok(record)
}

/// Answers and judges every case. Per-case failures score 0 and are noted
/// on the case; the run continues. The store is only read.
pub fn run_eval(retriever: &Retriever<'_>, oracle: &dyn ConceptOracle, cases: &[EvalCase], opts: EvalOptions, hierarchy_generation: u64) -> Result<EvalReport> {
    SearchBudget::new(opts.k)?;
    let selected: Vec<(usize, &EvalCase)> = cases
        .iter()
        .enumerate()
        .filter(|(_, c)| opts.include_adversarial || !c.is_adversarial())
        .collect();
    let excluded = cases.len() - selected.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| MemoryError::Config(format!("cannot start worker pool: {e}")))?;
    let records: Vec<CaseRecord> = pool.install(|| {
        selected
            .par_iter()
            .map(|(i, c)| run_case(retriever, oracle, c, i + 1, &opts))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut categories: BTreeMap<String, CategoryScore> = BTreeMap::new();
    let mut overall = CategoryScore::default();
    for r in &records {
        categories.entry(r.category.clone()).or_default().add(r.score);
        overall.add(r.score);
    }
    Ok(EvalReport {
        options: opts,
        hierarchy_generation,
        categories,
        overall,
        excluded,
        cases: records,
    })
}
