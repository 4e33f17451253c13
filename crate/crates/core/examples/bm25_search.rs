//! Build a BM25 index over a handful of passages and query it.
//!
//!     cargo run --example bm25_search -- "where did bogislaw die"

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage};
use deepnote::retrieval::{Bm25Index, Bm25Params};

fn main() -> deepnote::Result<()> {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Bogislaw XIII Stettin".into());
    let corpus = Corpus::new(vec![
        Passage::new(
            "p1",
            "Anna of Pomerania",
            "Anna of Pomerania was a daughter of Bogislaw XIII, Duke of Pomerania.",
        ),
        Passage::new(
            "p2",
            "Bogislaw XIII",
            "Bogislaw XIII, Duke of Pomerania, died in Stettin on 7 March 1606.",
        ),
        Passage::new(
            "p3",
            "Stettin",
            "Stettin, also known as Szczecin, is a city on the Oder river.",
        ),
        Passage::new("p4", "Paris", "Paris is the capital and largest city of France."),
    ])?;
    let index = Bm25Index::build(Arc::new(corpus), Bm25Params::default())?;
    println!(
        "docs={} avg_doc_len={:.2} terms={}",
        index.doc_count(),
        index.avg_doc_len(),
        index.vocabulary_len()
    );

    for hit in index.search(&query, 3)? {
        println!("{:>2}. {:<4} {:.4}", hit.rank, hit.passage_id, hit.score);
    }

    // Indexes round-trip through a JSONL file.
    let path = std::env::temp_dir().join("deepnote-example-index.jsonl");
    index.save(&path)?;
    let back = Bm25Index::load(&path)?;
    assert_eq!(back.search(&query, 3)?, index.search(&query, 3)?);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
