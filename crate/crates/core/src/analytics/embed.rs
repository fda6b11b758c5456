use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::pipeline::derive_seed;

pub const HASH_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Auth(String),
    #[error("embedding service returned {got} vectors for {expected} inputs")]
    Shape { expected: usize, got: usize },
}

/// Text to vector. Implementations return one vector per input, in order.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Deterministic offline embedder: each distinct string maps to a fixed
/// pseudo-random vector derived from the seed and the string.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: HASH_EMBEDDING_DIM }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[text]));
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Memoizes another embedder by exact string.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("embedding cache poisoned").len()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            texts.iter().filter(|t| !cache.contains_key(*t)).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            if fresh.len() != missing.len() {
                return Err(EmbedError::Shape { expected: missing.len(), got: fresh.len() });
            }
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            cache.extend(missing.into_iter().zip(fresh));
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    base_url: Url,
    model: String,
    api_key_env: String,
}

impl HttpEmbedder {
    pub fn new(base_url: Url, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, base_url, model: model.into(), api_key_env: api_key_env.into() }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embeddings", self.base_url.as_str().trim_end_matches('/'));
        let mut request = self.agent.post(&url);
        if !self.api_key_env.is_empty() {
            let key = std::env::var(&self.api_key_env)
                .map_err(|_| EmbedError::Auth(format!("environment variable {} is not set", self.api_key_env)))?;
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&EmbeddingRequest { model: &self.model, input: texts })
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(EmbedError::Transport(format!("HTTP {status} from {url}")));
        }
        let mut body: EmbeddingResponse =
            response.body_mut().read_json().map_err(|e| EmbedError::Transport(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(EmbedError::Shape { expected: texts.len(), got: body.data.len() });
        }
        body.data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Counting(std::sync::atomic::AtomicUsize);

    impl Embedder for Counting {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
            self.0.fetch_add(texts.len(), std::sync::atomic::Ordering::SeqCst);
            Ok(texts.iter().map(|t| vec![t.len() as f64]).collect())
        }
    }

    #[test]
    fn hash_embedder_is_stable() {
        let e = HashEmbedder::new(3);
        assert_eq!(e.vector("Irish").len(), HASH_EMBEDDING_DIM);
        assert_eq!(e.vector("Irish"), HashEmbedder::new(3).vector("Irish"));
        assert_ne!(e.vector("Irish"), e.vector("Scottish"));
        assert_ne!(e.vector("Irish"), HashEmbedder::new(4).vector("Irish"));
    }

    #[test]
    fn cache_embeds_each_string_once() {
        let c = CachedEmbedder::new(Counting(Default::default()));
        let texts: Vec<String> = ["a", "bb", "a"].iter().map(|s| s.to_string()).collect();
        assert_eq!(c.embed(&texts).unwrap(), vec![vec![1.0], vec![2.0], vec![1.0]]);
        c.embed(&texts).unwrap();
        assert_eq!(c.inner.0.load(std::sync::atomic::Ordering::SeqCst), 2);
        assert_eq!(c.cached(), 2);
    }
}
