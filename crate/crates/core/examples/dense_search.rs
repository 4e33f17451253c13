//! Brute-force cosine search with the offline hashing embedder.
//!
//! Swap in `HttpEmbeddingProvider` to use an embeddings endpoint instead.

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage};
use deepnote::retrieval::{DenseIndex, HashingEmbedder};

fn main() -> deepnote::Result<()> {
    let corpus = Corpus::new(vec![
        Passage::new(
            "p1",
            "Oder",
            "The Oder is a river in Central Europe that flows past Szczecin.",
        ),
        Passage::new(
            "p2",
            "Stettin",
            "Stettin, also known as Szczecin, is a city on the Oder river.",
        ),
        Passage::new("p3", "Paris", "Paris is the capital and largest city of France."),
    ])?;
    let index = DenseIndex::build(Arc::new(corpus), Arc::new(HashingEmbedder::new(256)))?;
    println!("dim={}", index.dim());
    for q in ["river past Szczecin", "capital of France"] {
        let hits = index.search(q, 2)?;
        let line: Vec<String> = hits
            .iter()
            .map(|h| format!("{}={:.3}", h.passage_id, h.score))
            .collect();
        println!("{q:<22} -> {}", line.join(" "));
    }
    Ok(())
}
