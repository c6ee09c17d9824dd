//! `hiermem`: ingest conversations, build the category hierarchy, ask
//! questions and run evaluations against a snapshot file.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 oracle unavailable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hiermem::harness::{
    self, exit_code, BuildOverrides, EvalFlags, HarnessConfig, EXIT_OK, EXIT_USAGE,
};
use hiermem::retrieval::{QueryAnswer, RankedItem, RetrievalMode};
use hiermem::MemoryError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hiermem", version, about = "Dual-route conversational memory")]
struct Cli {
    /// Print JSON instead of the human-readable rendering.
    #[arg(long, global = true)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a corpus (line-JSON messages or a LoCoMo file) into a store.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Conversation to take from a multi-conversation LoCoMo file.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Rebuild the category hierarchy over the store's entities.
    BuildHierarchy {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Minimum children per category.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        max_layers: Option<usize>,
    },
    /// Answer one question from memory.
    Ask {
        question: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// s1, s2 or both.
        #[arg(long, default_value = "both")]
        route: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Answer and judge a set of evaluation cases.
    Eval {
        cases: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "both")]
        route: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        sample: Option<String>,
        /// Score adversarial cases too (excluded by default).
        #[arg(long)]
        include_adversarial: bool,
    },
    /// Look inside a store.
    Inspect {
        #[arg(long)]
        store: PathBuf,
        #[command(subcommand)]
        what: Inspect,
    },
}

#[derive(Subcommand)]
enum Inspect {
    /// Node and edge counts per kind and layer.
    Stats,
    /// One entity with its edges and episodes.
    Entity { name: String },
    /// Check that a category chain exists, top first.
    Path {
        #[arg(required = true)]
        names: Vec<String>,
    },
}

struct Printer {
    json: bool,
    output: Option<PathBuf>,
}

impl Printer {
    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) -> Result<(), MemoryError> {
        let text = serde_json::to_string_pretty(value)?;
        if let Some(p) = &self.output {
            std::fs::write(p, format!("{text}\n"))?;
        }
        if self.json {
            println!("{text}");
        } else {
            print!("{}", human());
        }
        Ok(())
    }
}

fn load_config(path: &Path) -> Result<HarnessConfig, MemoryError> {
    HarnessConfig::load(path)
}

fn kv<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).unwrap_or_default();
    match v.as_object() {
        Some(map) => map.iter().map(|(k, v)| format!("{k}: {v}\n")).collect(),
        None => format!("{v}\n"),
    }
}

fn render_items(title: &str, items: &[RankedItem]) -> String {
    let mut out = format!("{title} ({})\n", items.len());
    for it in items {
        let routes: Vec<String> = it
            .route
            .iter()
            .map(|r| serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .collect();
        out.push_str(&format!("  {:>8.4} [{}] {}\n", it.score, routes.join(","), it.display_text.replace('\n', " / ")));
    }
    out
}

fn render_answer(a: &QueryAnswer) -> String {
    let mut out = format!("answer: {}\n\n", a.answer);
    out.push_str(&render_items("episodes", &a.evidence.episodes));
    out.push_str(&render_items("entities", &a.evidence.entities));
    out.push_str(&render_items("facts", &a.evidence.edges));
    if !a.trace.selection_steps.is_empty() {
        out.push_str("selection path\n");
        for s in &a.trace.selection_steps {
            out.push_str(&format!("  layer {}: {} of {} offered", s.layer, s.selected.len(), s.offered));
            if !s.selected.is_empty() {
                out.push_str(&format!(" ({})", s.selected.join(", ")));
            }
            out.push('\n');
        }
    }
    for w in &a.trace.warnings {
        out.push_str(&format!("note: {w}\n"));
    }
    out
}

fn run(cli: Cli) -> Result<i32, MemoryError> {
    let printer = Printer {
        json: cli.json,
        output: cli.output,
    };
    match cli.command {
        Command::Ingest {
            corpus,
            store,
            config,
            sample,
        } => {
            let cfg = load_config(&config)?;
            let outcome = harness::cmd_ingest(&corpus, &store, &cfg, sample.as_deref())?;
            printer.emit(&outcome.report, || kv(&outcome.report))?;
            if let Some(e) = outcome.error {
                return Err(e);
            }
        }
        Command::BuildHierarchy {
            store,
            config,
            n,
            max_layers,
        } => {
            let cfg = load_config(&config)?;
            let report = harness::cmd_build_hierarchy(
                &store,
                &cfg,
                BuildOverrides {
                    compression_ratio: n,
                    max_layers,
                },
            )?;
            printer.emit(&report, || {
                let mut s = format!("generation {}\nlayer counts {:?}\n", report.generation, report.layer_counts());
                s.push_str(&format!("termination {:?}\n", report.termination));
                for l in &report.layers {
                    s.push_str(&format!("  layer {}: {} nodes, {} promoted\n", l.layer, l.nodes, l.promoted));
                }
                for a in &report.audit {
                    s.push_str(&format!("audit: {a}\n"));
                }
                s
            })?;
        }
        Command::Ask {
            question,
            store,
            config,
            route,
            k,
        } => {
            let cfg = load_config(&config)?;
            let mode: RetrievalMode = route.parse()?;
            match harness::cmd_ask(&store, &cfg, &question, mode, k)? {
                Ok(answer) => printer.emit(&answer, || render_answer(&answer))?,
                Err(failure) => {
                    if printer.json {
                        eprintln!("{}", serde_json::to_string_pretty(&failure.trace)?);
                    }
                    return Err(failure.error);
                }
            }
        }
        Command::Eval {
            cases,
            store,
            config,
            route,
            k,
            sample,
            include_adversarial,
        } => {
            let cfg = load_config(&config)?;
            let flags = EvalFlags {
                mode: route.parse()?,
                k,
                include_adversarial,
            };
            let report = harness::cmd_eval(&store, &cfg, &cases, sample.as_deref(), flags)?;
            printer.emit(&report, || report.table())?;
        }
        Command::Inspect { store, what } => match what {
            Inspect::Stats => {
                let s = harness::cmd_inspect_stats(&store)?;
                printer.emit(&s, || kv(&s))?;
            }
            Inspect::Entity { name } => {
                let v = harness::cmd_inspect_entity(&store, &name)?;
                printer.emit(&v, || {
                    let mut s = format!("{} ({}): {}\n", v.name, v.id, v.summary);
                    if !v.tag.is_empty() {
                        s.push_str(&format!("tags: {}\n", v.tag.join(", ")));
                    }
                    if !v.categories.is_empty() {
                        s.push_str(&format!("categories: {}\n", v.categories.join(", ")));
                    }
                    for e in &v.edges {
                        s.push_str(&format!("  fact: {} [with {}]\n", e.fact, e.other));
                    }
                    for ep in &v.episodes {
                        s.push_str(&format!("  episode {} [{}] {}\n", ep.id, ep.valid_at, ep.content));
                    }
                    s
                })?;
            }
            Inspect::Path { names } => {
                let v = harness::cmd_inspect_path(&store, &names)?;
                printer.emit(&v, || format!("path exists: {}\n", v.names.join(" -> ")))?;
            }
        },
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
