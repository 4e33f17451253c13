//! Exact (brute-force) cosine retrieval behind a pluggable embedding provider.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::{json, Value};

use super::{rank_top_k, tokenize, Retriever, ScoredPassage};
use crate::corpus::{Corpus, Passage};
use crate::llm::{post_json, HttpConfig, LlmError, RateLimiter};
use crate::{Error, Result};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Maps texts to unit-length vectors of one fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(texts)
    }
}

fn checked_embed(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    expected_dim: Option<usize>,
) -> Result<Vec<Vec<f32>>> {
    let vectors = provider.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Embedding(format!(
            "provider returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = expected_dim.or_else(|| vectors.first().map(Vec::len));
    for (i, v) in vectors.iter().enumerate() {
        if Some(v.len()) != dim || v.is_empty() {
            return Err(Error::Embedding(format!(
                "vector {i} has dimension {}, expected {dim:?}",
                v.len()
            )));
        }
        let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Embedding(format!("vector {i} has norm {norm}, expected 1")));
        }
    }
    Ok(vectors)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Pre-embedded passages plus the provider used to embed queries.
pub struct DenseIndex {
    corpus: Arc<Corpus>,
    vectors: Vec<Vec<f32>>,
    provider: Arc<dyn EmbeddingProvider>,
    by_id: HashMap<String, usize>,
}

impl DenseIndex {
    pub fn build(corpus: Arc<Corpus>, provider: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        let texts: Vec<String> = corpus.passages().iter().map(Passage::index_text).collect();
        let vectors = checked_embed(provider.as_ref(), &texts, None)?;
        let by_id = corpus
            .passages()
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        Ok(DenseIndex {
            corpus,
            vectors,
            provider,
            by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        if k < 1 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let q = checked_embed(self.provider.as_ref(), &[query.to_string()], Some(self.dim()))?
            .pop()
            .expect("one vector");
        Ok(self.search_vector(&q, k))
    }

    /// Scores every passage against an already-embedded query.
    pub fn search_vector(&self, query: &[f32], k: usize) -> Vec<ScoredPassage> {
        let scored = self
            .vectors
            .iter()
            .zip(self.corpus.passages())
            .map(|(v, p)| (dot(query, v), p.id.as_str()))
            .collect();
        rank_top_k(scored, k)
    }
}

impl Retriever for DenseIndex {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        DenseIndex::search(self, query, k)
    }

    fn passage(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).and_then(|&i| self.corpus.get(i))
    }
}

/// One-shot dense search: embeds the corpus and the query, then ranks.
pub fn dense_search(
    provider: Arc<dyn EmbeddingProvider>,
    corpus: Arc<Corpus>,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredPassage>> {
    DenseIndex::build(corpus, provider)?.search(query, k)
}

/// Feature-hashing bag-of-words embedder. Needs no model; useful offline and
/// in tests. Texts with no tokens map to the first basis vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        HashingEmbedder { dim }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; self.dim];
                let tokens = tokenize(t);
                if tokens.is_empty() {
                    v[0] = 1.0;
                    return v;
                }
                for tok in tokens {
                    let h = fnv1a(tok.as_bytes());
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    v[(h % self.dim as u64) as usize] += sign;
                }
                normalize(&mut v);
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                v
            })
            .collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Embeddings from a server exposing `POST /v1/embeddings`. Vectors are
/// re-normalized client-side.
pub struct HttpEmbeddingProvider {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpConfig) -> std::result::Result<Self, LlmError> {
        let api_key = config.resolve_key()?;
        let client = config.client()?;
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(HttpEmbeddingProvider {
            config,
            api_key,
            client,
            limiter,
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = json!({"model": self.config.model, "input": texts});
        let value = post_json(
            &self.client,
            &self.config.endpoint("/v1/embeddings"),
            &self.api_key,
            &body,
            self.config.retry_policy(),
            self.limiter.as_ref(),
        )
        .map_err(|e| Error::Embedding(format!("{}: {e}", self.config.base_url)))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Embedding("response has no `data` array".into()))?;
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Embedding(format!("item {pos} has no embedding")))?;
            let mut v: Vec<f32> = emb
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Embedding(format!("item {pos} has non-numeric values")))?;
            normalize(&mut v);
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| Error::Embedding(format!("index {idx} out of range")))?;
            *slot = Some(v);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Embedding(format!("missing embedding {i}"))))
            .collect()
    }
}
