//! Text embedders.
//!
//! [`HashEmbedder`] is a deterministic feature-hashing embedder used for
//! hermetic runs; [`RemoteEmbedder`] calls an OpenAI-compatible
//! `/embeddings` endpoint and prefix-truncates the result to the store
//! dimension.

use serde_json::json;

use crate::error::{MemoryError, Result};
use crate::index::tokenize;
use crate::model::{truncate_embedding, Embedding};
use crate::oracle::transport::JsonTransport;

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// 64-bit FNV-1a. Used where a hash must be stable across platforms and
/// toolchains, which `std`'s `DefaultHasher` does not promise.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing over word tokens (weight 1.0) and character
/// trigrams of each token (weight 0.5), L2-normalized.
///
/// Texts that tokenize to nothing hash their raw bytes into one feature, so
/// every non-empty input embeds to a unit vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &[u8], weight: f64) {
        let h = fnv1a(feature);
        let slot = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        acc[slot] += sign * weight;
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut acc = vec![0.0f64; self.dim];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            if !text.is_empty() {
                self.add_feature(&mut acc, text.as_bytes(), 1.0);
            }
        } else {
            for tok in &tokens {
                self.add_feature(&mut acc, format!("w:{tok}").as_bytes(), 1.0);
                let chars: Vec<char> = tok.chars().collect();
                if chars.len() > 3 {
                    for win in chars.windows(3) {
                        let gram: String = win.iter().collect();
                        self.add_feature(&mut acc, format!("g:{gram}").as_bytes(), 0.5);
                    }
                }
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Embedding::zeros(self.dim));
        }
        Ok(Embedding(acc.iter().map(|x| (x / norm) as f32).collect()).normalized())
    }
}

/// Embeddings from an OpenAI-compatible endpoint, truncated to `dim`.
pub struct RemoteEmbedder {
    transport: Box<dyn JsonTransport>,
    model: String,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(transport: Box<dyn JsonTransport>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            transport,
            model: model.into(),
            dim,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| MemoryError::OracleFormat("embedding response had no data".into()))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.model, "input": texts });
        let resp = self.transport.post_json("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| MemoryError::OracleFormat("embedding response missing data".into()))?;
        if data.len() != texts.len() {
            return Err(MemoryError::OracleFormat(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let raw: Vec<f32> = item
                    .get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| MemoryError::OracleFormat("embedding item missing vector".into()))?
                    .iter()
                    .map(|x| x.as_f64().map(|v| v as f32))
                    .collect::<Option<Vec<f32>>>()
                    .ok_or_else(|| MemoryError::OracleFormat("non-numeric embedding component".into()))?;
                let e = Embedding(raw);
                if !e.is_finite() {
                    return Err(MemoryError::OracleFormat("non-finite embedding component".into()));
                }
                truncate_embedding(&e, self.dim)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_unit_and_stable() {
        let e = HashEmbedder::new(128);
        let a = e.embed("Dave attended a conference in Detroit.").unwrap();
        let b = e.embed("Dave attended a conference in Detroit.").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 128);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn punctuation_only_text_is_not_zero() {
        let e = HashEmbedder::new(32);
        assert!((e.embed("!!!").unwrap().norm() - 1.0).abs() < 1e-6);
        assert_eq!(e.embed("").unwrap(), Embedding::zeros(32));
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let e = HashEmbedder::new(128);
        let q = e.embed("trip to Detroit").unwrap();
        let near = e.embed("we flew to Detroit last week").unwrap();
        let far = e.embed("chocolate cake recipe").unwrap();
        assert!(q.cosine(&near) > q.cosine(&far));
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
