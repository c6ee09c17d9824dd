#![allow(dead_code)]

use std::path::PathBuf;

use hiermem::harness::corpus::load_messages;
use hiermem::harness::HarnessConfig;
use hiermem::hierarchy::{self, BuildConfig, HierarchyReport};
use hiermem::ingest::{self, IngestReport, Message};
use hiermem::oracle::{LexiconTerm, ScriptedFixture, ScriptedOracle, SelectionRule, TaxonomyEntry};
use hiermem::{EngineConfig, HashEmbedder, MemoryStore, Timestamp};

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct Loaded {
    pub store: MemoryStore,
    pub oracle: ScriptedOracle,
    pub embedder: HashEmbedder,
    pub messages: Vec<Message>,
    pub ingest: IngestReport,
    pub build: HierarchyReport,
}

/// Ingests a fixture corpus into a fresh in-memory store and builds its
/// hierarchy with the fixture's own config.
pub fn load_fixture(name: &str) -> Loaded {
    let dir = fixture_dir(name);
    let cfg = HarnessConfig::load(&dir.join("config.json")).unwrap();
    let oracle = ScriptedOracle::from_path(&dir.join("oracle.json")).unwrap();
    let messages = load_messages(&dir.join("corpus.jsonl"), None).unwrap();
    build_store(cfg.engine, oracle, messages)
}

pub fn build_store(engine: EngineConfig, oracle: ScriptedOracle, messages: Vec<Message>) -> Loaded {
    let embedder = HashEmbedder::new(engine.embedding_dim);
    let mut store = MemoryStore::new(engine).unwrap();
    let ingest = ingest::ingest(&mut store, &oracle, &embedder, &messages).into_result().unwrap();
    let build = hierarchy::build(&store, &oracle, &embedder, BuildConfig::from(store.config())).unwrap();
    Loaded {
        store,
        oracle,
        embedder,
        messages,
        ingest,
        build,
    }
}

pub fn msg(speaker: &str, text: &str, ts: i64, session: &str) -> Message {
    Message {
        speaker: speaker.into(),
        text: text.into(),
        timestamp: Timestamp::from_unix(ts).unwrap(),
        session_id: session.into(),
    }
}

pub const ENUM_QUERY: &str = "Which cities did Dave visit?";

pub const ENUM_MEMBERS: [&str; 12] = [
    "Lisbon", "Kyoto", "Nairobi", "Quito", "Oslo", "Hanoi", "Tunis", "Perth", "Bergen", "Cusco", "Dakar", "Porto",
];

/// A corpus where twelve visited cities are each mentioned once in passing,
/// spread over 40 sessions, among 60 short "memo" entities whose summaries
/// repeat some of the query's words.
///
/// Member summaries are long and contain every query word once, so the
/// distinct-overlap re-ranker prefers them while BM25 length normalization
/// and cosine both prefer the short memos.
pub fn enumerative_corpus() -> (Vec<Message>, ScriptedFixture) {
    let words = ["which", "cities", "did", "dave", "visit"];
    let mut lexicon = Vec::new();
    for city in ENUM_MEMBERS {
        lexicon.push(LexiconTerm {
            name: city.into(),
            summary: Some(format!(
                "{city} came up once when Dave did talk about a visit there; it is one of the cities which he \
                 listed among the many places from long trips over several years with family, friends and colleagues"
            )),
            ..LexiconTerm::default()
        });
    }
    let memos: Vec<String> = (1..=60).map(|i| format!("memo {i}")).collect();
    for (i, m) in memos.iter().enumerate() {
        let a = words[i % 5];
        let b = words[(i + 1) % 5];
        let c = words[(i + 3) % 5];
        lexicon.push(LexiconTerm {
            name: m.clone(),
            summary: Some(format!("{a} {b} {c} {a} {b} {c}")),
            ..LexiconTerm::default()
        });
    }

    let mut messages = Vec::new();
    let day = 86_400;
    let base = 1_672_531_200; // 2023-01-01
    for s in 0..40usize {
        let session = format!("enum/session_{}", s + 1);
        let t = base + s as i64 * 3 * day;
        let m1 = &memos[(s * 3) % 60];
        let m2 = &memos[(s * 3 + 1) % 60];
        let m3 = &memos[(s * 3 + 2) % 60];
        messages.push(msg("Dave", &format!("Busy week at the office, I filed {m1} and {m2}."), t, &session));
        messages.push(msg("Lena", &format!("Did you also finish {m3}?"), t + 60, &session));
        if s % 3 == 1 && s / 3 < ENUM_MEMBERS.len() {
            let city = ENUM_MEMBERS[s / 3];
            messages.push(msg(
                "Dave",
                &format!("Yes. Unrelated, but the food in {city} was great when I was there."),
                t + 120,
                &session,
            ));
        } else {
            messages.push(msg("Dave", "Yes, all done before lunch.", t + 120, &session));
        }
    }
    let fixture = ScriptedFixture {
        lexicon,
        disable_cooccurrence: true,
        taxonomy: vec![
            TaxonomyEntry {
                name: "Cities Visited".into(),
                children: ENUM_MEMBERS.iter().map(|s| s.to_string()).collect(),
                layer: Some(1),
                ..TaxonomyEntry::default()
            },
            TaxonomyEntry {
                name: "Office Memos".into(),
                children: memos,
                layer: Some(1),
                ..TaxonomyEntry::default()
            },
            TaxonomyEntry {
                name: "Everything".into(),
                children: vec!["Cities Visited".into(), "Office Memos".into()],
                layer: Some(2),
                ..TaxonomyEntry::default()
            },
        ],
        selection: vec![SelectionRule {
            keywords: vec!["cities".into()],
            select: vec!["Everything".into()],
            all_children: vec!["Cities Visited".into()],
        }],
        ..ScriptedFixture::default()
    };
    (messages, fixture)
}

pub fn enumerative_store() -> Loaded {
    let (messages, fixture) = enumerative_corpus();
    let engine = EngineConfig {
        embedding_dim: 128,
        top_k: 10,
        compression_ratio: 2,
        ..EngineConfig::default()
    };
    build_store(engine, ScriptedOracle::new(fixture), messages)
}
