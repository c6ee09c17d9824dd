//! Harness configuration: engine settings plus which oracle, embedder and
//! re-ranker to wire up.
//!
//! ```json
//! {
//!   "engine": { "embedding_dim": 128, "top_k": 10 },
//!   "oracle": { "kind": "scripted", "fixture": "fixture.json" },
//!   "embedder": { "kind": "hash" },
//!   "reranker": { "kind": "lexical" }
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory. Secrets never
//! live in the file: remote endpoints name the environment variable holding
//! their key.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::embed::{Embedder, HashEmbedder, RemoteEmbedder};
use crate::error::{MemoryError, Result};
use crate::oracle::{ConceptOracle, HttpTransport, RemoteOracle, RemoteSettings, RetryPolicy, ScriptedOracle};
use crate::retrieval::{LexicalReranker, RemoteReranker, Reranker};

pub const DEFAULT_API_KEY_ENV: &str = "HIERMEM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Sampling temperature; only the oracle uses it.
    #[serde(default)]
    pub temperature: f64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    60
}

impl Endpoint {
    fn transport(&self) -> HttpTransport {
        HttpTransport::new(
            self.base_url.clone(),
            std::env::var(&self.api_key_env).ok(),
            Duration::from_secs(self.timeout_secs),
            RetryPolicy::default(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    Scripted { fixture: PathBuf },
    Remote(Endpoint),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    #[default]
    Hash,
    Remote(Endpoint),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RerankerSpec {
    #[default]
    Lexical,
    Remote(Endpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    pub oracle: OracleSpec,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub reranker: RerankerSpec,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MemoryError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: HarnessConfig = serde_json::from_str(&text)
            .map_err(|e| MemoryError::Config(format!("config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.engine.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn oracle(&self) -> Result<Box<dyn ConceptOracle>> {
        Ok(match &self.oracle {
            OracleSpec::Scripted { fixture } => Box::new(ScriptedOracle::from_path(&self.resolve(fixture))?),
            OracleSpec::Remote(endpoint) => Box::new(RemoteOracle::new(
                Box::new(endpoint.transport()),
                RemoteSettings {
                    model: endpoint.model.clone(),
                    temperature: endpoint.temperature,
                },
            )),
        })
    }

    /// Embedder producing vectors of `dim` dimensions.
    pub fn embedder(&self, dim: usize) -> Box<dyn Embedder> {
        match &self.embedder {
            EmbedderSpec::Hash => Box::new(HashEmbedder::new(dim)),
            EmbedderSpec::Remote(endpoint) => {
                Box::new(RemoteEmbedder::new(Box::new(endpoint.transport()), endpoint.model.clone(), dim))
            }
        }
    }

    pub fn reranker(&self) -> Box<dyn Reranker> {
        match &self.reranker {
            RerankerSpec::Lexical => Box::new(LexicalReranker),
            RerankerSpec::Remote(endpoint) => {
                Box::new(RemoteReranker::new(Box::new(endpoint.transport()), endpoint.model.clone()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scripted_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("fx.json"), "{}").unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"engine": {"top_k": 5}, "oracle": {"kind": "scripted", "fixture": "fx.json"}}"#).unwrap();
        let cfg = HarnessConfig::load(&p).unwrap();
        assert_eq!(cfg.engine.top_k, 5);
        assert_eq!(cfg.engine.embedding_dim, 128);
        assert!(cfg.oracle().is_ok());
        assert_eq!(cfg.embedder(8).dimension(), 8);
    }

    #[test]
    fn remote_config_parses_with_defaults() {
        let cfg: HarnessConfig = serde_json::from_str(
            r#"{"oracle": {"kind": "remote", "base_url": "http://x", "model": "m"},
                "embedder": {"kind": "remote", "base_url": "http://x", "model": "e"}}"#,
        )
        .unwrap();
        match cfg.oracle {
            OracleSpec::Remote(endpoint) => {
                assert_eq!(endpoint.api_key_env, DEFAULT_API_KEY_ENV);
                assert_eq!(endpoint.temperature, 0.0);
            }
            _ => panic!("expected remote"),
        }
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"oracle": {"kind": "scripted", "fixture": "x"}, "bogus": 1}"#).unwrap();
        assert!(matches!(HarnessConfig::load(&p), Err(MemoryError::Config(_))));
    }
}
