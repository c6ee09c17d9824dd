//! Single-file snapshot container. Layout is documented in `docs/FORMAT.md`:
//! one manifest line, then each record stream as JSON lines in manifest order.
//! Indexes are not persisted; they are rebuilt on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HierarchyGeneration, MemoryStore, WriteBatch};
use crate::config::EngineConfig;
use crate::error::{MemoryError, Result};
use crate::model::{CategoryEdge, CategoryRecord, EntityRecord, EpisodeRecord, EpisodicEdge, RelationEdge};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;
const FORMAT_TAG: &str = "hiermem-snapshot";
const STREAMS: [&str; 6] = [
    "episodes",
    "entities",
    "relation_edges",
    "episodic_edges",
    "categories",
    "category_edges",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotManifest {
    pub format: String,
    pub schema_version: u32,
    pub embedding_dim: usize,
    pub next_id: u64,
    pub hierarchy_generation: u64,
    pub config: EngineConfig,
    pub streams: Vec<StreamInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamInfo {
    pub name: String,
    pub count: usize,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_stream<T: Serialize>(name: &str, items: impl Iterator<Item = T>) -> Result<(StreamInfo, Vec<u8>)> {
    let mut buf = Vec::new();
    let mut count = 0;
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
        count += 1;
    }
    let info = StreamInfo {
        name: name.to_string(),
        count,
        sha256: hex(&Sha256::digest(&buf)),
    };
    Ok((info, buf))
}

/// Cursor over the snapshot's lines that remembers byte offsets for
/// diagnostics.
struct Lines<'a> {
    data: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, offset: usize, line: usize, message: impl Into<String>) -> MemoryError {
        MemoryError::Snapshot {
            offset: offset as u64,
            line,
            message: message.into(),
        }
    }

    /// Next line without its newline, with its start offset and line number.
    /// A final line lacking its newline means the file was truncated.
    fn next_line(&mut self) -> Result<(&'a [u8], usize, usize)> {
        if self.pos >= self.data.len() {
            return Err(self.err(self.pos, self.line + 1, "unexpected end of file"));
        }
        let start = self.pos;
        let Some(rel) = self.data[start..].iter().position(|&b| b == b'\n') else {
            return Err(self.err(start, self.line + 1, "truncated line (missing newline)"));
        };
        self.pos = start + rel + 1;
        self.line += 1;
        Ok((&self.data[start..start + rel], start, self.line))
    }

    fn parse<T: DeserializeOwned>(&mut self) -> Result<(T, &'a [u8])> {
        let (raw, offset, line) = self.next_line()?;
        let value = serde_json::from_slice(raw).map_err(|e| self.err(offset + e.column().saturating_sub(1), line, e.to_string()))?;
        Ok((value, raw))
    }

    fn read_stream<T: DeserializeOwned>(&mut self, info: &StreamInfo) -> Result<Vec<T>> {
        let start = self.pos;
        let start_line = self.line + 1;
        let mut hasher = Sha256::new();
        let mut out = Vec::with_capacity(info.count);
        for _ in 0..info.count {
            let (item, raw) = self.parse::<T>()?;
            hasher.update(raw);
            hasher.update(b"\n");
            out.push(item);
        }
        let digest = hex(&hasher.finalize());
        if digest != info.sha256 {
            return Err(self.err(start, start_line, format!("checksum mismatch in stream {:?}", info.name)));
        }
        Ok(out)
    }
}

impl MemoryStore {
    pub fn to_snapshot_bytes(&self) -> Result<Vec<u8>> {
        let h = self.hierarchy();
        let streams = [
            encode_stream(STREAMS[0], self.episodes.values())?,
            encode_stream(STREAMS[1], self.entities.values())?,
            encode_stream(STREAMS[2], self.edges.values())?,
            encode_stream(STREAMS[3], self.episodic.iter())?,
            encode_stream(STREAMS[4], h.categories())?,
            encode_stream(STREAMS[5], h.edges())?,
        ];
        let manifest = SnapshotManifest {
            format: FORMAT_TAG.to_string(),
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            embedding_dim: self.config.embedding_dim,
            next_id: self.next_id_value(),
            hierarchy_generation: h.generation(),
            config: self.config.clone(),
            streams: streams.iter().map(|(i, _)| i.clone()).collect(),
        };
        let mut out = serde_json::to_vec(&manifest)?;
        out.push(b'\n');
        for (_, body) in streams {
            out.extend_from_slice(&body);
        }
        Ok(out)
    }

    /// Writes the snapshot to a sibling temp file, then renames it over
    /// `path`, so a crash never leaves a half-written snapshot at `path`.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let bytes = self.to_snapshot_bytes()?;
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<MemoryStore> {
        let bytes = fs::read(path)?;
        Self::from_snapshot_bytes(&bytes)
    }

    pub fn from_snapshot_bytes(data: &[u8]) -> Result<MemoryStore> {
        let mut lines = Lines { data, pos: 0, line: 0 };
        let (manifest, _) = lines.parse::<SnapshotManifest>()?;
        if manifest.format != FORMAT_TAG {
            return Err(lines.err(0, 1, format!("not a snapshot (format {:?})", manifest.format)));
        }
        if manifest.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(lines.err(0, 1, format!("unsupported schema version {}", manifest.schema_version)));
        }
        if manifest.embedding_dim != manifest.config.embedding_dim {
            return Err(lines.err(0, 1, "manifest embedding_dim disagrees with config"));
        }
        let names: Vec<&str> = manifest.streams.iter().map(|s| s.name.as_str()).collect();
        if names != STREAMS {
            return Err(lines.err(0, 1, format!("unexpected stream list {names:?}")));
        }
        let s = &manifest.streams;
        let episodes: Vec<EpisodeRecord> = lines.read_stream(&s[0])?;
        let entities: Vec<EntityRecord> = lines.read_stream(&s[1])?;
        let edges: Vec<RelationEdge> = lines.read_stream(&s[2])?;
        let episodic_at = lines.pos;
        let episodic_line = lines.line + 1;
        let episodic: Vec<EpisodicEdge> = lines.read_stream(&s[3])?;
        let categories: Vec<CategoryRecord> = lines.read_stream(&s[4])?;
        let category_edges: Vec<CategoryEdge> = lines.read_stream(&s[5])?;
        if lines.pos != data.len() {
            return Err(lines.err(lines.pos, lines.line + 1, "trailing data after last stream"));
        }

        let mut store = MemoryStore::new(manifest.config.clone())?;
        store.apply(WriteBatch {
            episodes,
            entities,
            edges,
        })?;
        if !store.episodic.iter().copied().eq(episodic.iter().copied()) {
            return Err(lines.err(
                episodic_at,
                episodic_line,
                "episodic_edges stream does not match entity episode_idx",
            ));
        }
        let violations = store.validate_hierarchy(&categories, &category_edges);
        if !violations.is_empty() {
            return Err(MemoryError::Invariant(violations));
        }
        store.install_generation(HierarchyGeneration::new(
            manifest.hierarchy_generation,
            categories,
            category_edges,
        ));
        store.next_id.fetch_max(manifest.next_id, std::sync::atomic::Ordering::SeqCst);
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::embed::{Embedder, HashEmbedder};
    use crate::index::{TextKind, VectorKind};
    use crate::model::{NodeId, Timestamp};
    use std::collections::BTreeSet;

    fn sample_store() -> MemoryStore {
        let cfg = EngineConfig {
            embedding_dim: 8,
            ..EngineConfig::default()
        };
        let emb = HashEmbedder::new(8);
        let mut s = MemoryStore::new(cfg).unwrap();
        let mut batch = WriteBatch::default();
        let mut ep_ids = Vec::new();
        for i in 0..40 {
            let text = format!("episode {i} talks about topic{} and topic{}", i % 7, i % 3);
            let id = s.allocate_id();
            ep_ids.push(id);
            batch.episodes.push(EpisodeRecord {
                id,
                episode_embedding: emb.embed(&text).unwrap(),
                content: text,
                valid_at: Timestamp::from_unix(1_000 + i).unwrap(),
                source_session: format!("s{}", i % 4),
            });
        }
        let mut ent_ids = Vec::new();
        for i in 0..40 {
            let name = format!("topic{i}");
            let id = s.allocate_id();
            ent_ids.push(id);
            batch.entities.push(EntityRecord {
                id,
                summary: format!("{name} is discussed"),
                tag: vec!["subject".into()],
                episode_idx: ep_ids.iter().skip(i % 7).step_by(7).copied().collect::<BTreeSet<_>>(),
                name_embedding: emb.embed(&name).unwrap(),
                summary_embedding: emb.embed(&format!("{name} is discussed")).unwrap(),
                name,
                layer: 0,
            });
        }
        for i in 0..20 {
            let fact = format!("topic{i} relates to topic{}", i + 1);
            batch.edges.push(RelationEdge {
                id: s.allocate_id(),
                source: ent_ids[i],
                target: ent_ids[i + 1],
                fact_embedding: emb.embed(&fact).unwrap(),
                fact,
                valid_at: Timestamp::from_unix(5).unwrap(),
                invalid_at: if i % 2 == 0 { Some(Timestamp::from_unix(9).unwrap()) } else { None },
                reflexive: false,
            });
        }
        s.apply(batch).unwrap();
        let cat = CategoryRecord {
            id: s.allocate_id(),
            name: "Topics".into(),
            summary: "Topics".into(),
            tag: vec![],
            episode_idx: BTreeSet::new(),
            name_embedding: emb.embed("Topics").unwrap(),
            summary_embedding: emb.embed("Topics").unwrap(),
            layer: 1,
        };
        let edges = ent_ids.iter().map(|&c| CategoryEdge { parent: cat.id, child: c }).collect();
        s.swap_hierarchy(vec![cat], edges).unwrap();
        s
    }

    #[test]
    fn round_trip_preserves_queries() {
        let s = sample_store();
        let bytes = s.to_snapshot_bytes().unwrap();
        let t = MemoryStore::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(t.to_snapshot_bytes().unwrap(), bytes);
        assert_eq!(s.stats(), t.stats());
        assert_eq!(s.allocate_id(), t.allocate_id());
        let emb = HashEmbedder::new(8);
        for q in ["topic3", "episode talks", "relates topic1", "nothing"] {
            for kind in [TextKind::EpisodeContent, TextKind::EntityText, TextKind::EdgeFact] {
                assert_eq!(s.bm25_search(q, kind, 50), t.bm25_search(q, kind, 50));
            }
            let v = emb.embed(q).unwrap();
            for kind in [VectorKind::Episode, VectorKind::EntityName, VectorKind::EntitySummary, VectorKind::EdgeFact] {
                assert_eq!(s.vector_search(&v, kind, 50).unwrap(), t.vector_search(&v, kind, 50).unwrap());
            }
        }
        for e in s.entities() {
            assert_eq!(s.edges_of(e.id).unwrap(), t.edges_of(e.id).unwrap());
            assert_eq!(s.episodes_of(e.id).unwrap(), t.episodes_of(e.id).unwrap());
        }
        let before = Timestamp::from_unix(1_020).unwrap();
        assert_eq!(s.recent_episodes(before, 10), t.recent_episodes(before, 10));
        assert!(t.audit().is_empty());
    }

    #[test]
    fn truncated_snapshot_fails_with_offset() {
        let bytes = sample_store().to_snapshot_bytes().unwrap();
        let cut = &bytes[..bytes.len() * 2 / 3];
        match MemoryStore::from_snapshot_bytes(cut) {
            Err(MemoryError::Snapshot { offset, line, .. }) => {
                assert!(offset > 0 && line > 1);
            }
            other => panic!("expected snapshot error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_record_is_detected() {
        let mut bytes = sample_store().to_snapshot_bytes().unwrap();
        let pos = bytes.windows(7).position(|w| w == b"topic3 ").unwrap();
        bytes[pos] = b'T';
        assert!(matches!(
            MemoryStore::from_snapshot_bytes(&bytes),
            Err(MemoryError::Snapshot { .. })
        ));
    }

    #[test]
    fn empty_store_round_trip() {
        let s = MemoryStore::new(EngineConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.snap");
        s.save_snapshot(&p).unwrap();
        let t = MemoryStore::load_snapshot(&p).unwrap();
        assert_eq!(t.stats(), s.stats());
        assert_eq!(t.entity_count(), 0);
        assert_eq!(t.kind_of(NodeId(1)), None);
    }
}
