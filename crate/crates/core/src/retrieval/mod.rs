//! Sparse and dense retrieval with a shared, deterministic result order.
//!
//! Every result list is sorted by score descending, ties broken by passage id
//! ascending, and ranked consecutively from 1.

mod bm25;
mod dense;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::Result;

pub use bm25::{Bm25Index, Bm25Params, Posting};
pub use dense::{dense_search, DenseIndex, EmbeddingProvider, HashingEmbedder, HttpEmbeddingProvider};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Anything that can answer top-k queries over a passage collection.
pub trait Retriever: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>>;

    fn passage(&self, id: &str) -> Option<&Passage>;
}

pub(crate) fn result_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Sorts `(score, id)` candidates into the canonical order and keeps `k`.
pub(crate) fn rank_top_k(mut scored: Vec<(f64, &str)>, k: usize) -> Vec<ScoredPassage> {
    scored.sort_by(result_order);
    scored.truncate(k);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, id))| ScoredPassage {
            passage_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect()
}

/// Merges result lists by passage id, keeping each passage's best score, and
/// re-ranks the union in the canonical order.
pub fn merge_results<'a>(lists: impl IntoIterator<Item = &'a [ScoredPassage]>) -> Vec<ScoredPassage> {
    let mut best: std::collections::HashMap<&str, f64> = std::collections::HashMap::new();
    for list in lists {
        for h in list {
            best.entry(h.passage_id.as_str())
                .and_modify(|s| *s = s.max(h.score))
                .or_insert(h.score);
        }
    }
    let n = best.len();
    rank_top_k(best.into_iter().map(|(id, s)| (s, id)).collect(), n)
}
