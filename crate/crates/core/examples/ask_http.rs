//! One session against a real chat-completions endpoint.
//!
//!     DEEPNOTE_API_KEY=... cargo run --example ask_http -- "question"
//!
//! `DEEPNOTE_BASE_URL` and `DEEPNOTE_MODEL` override the defaults.

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage};
use deepnote::engine::{EngineConfig, NoteEngine};
use deepnote::llm::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
use deepnote::retrieval::{Bm25Index, Bm25Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::var(DEFAULT_API_KEY_ENV).is_err() {
        eprintln!("set {DEFAULT_API_KEY_ENV} to run this example");
        return Ok(());
    }
    let q = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Where did Anna of Pomerania's father die?".into());
    let d = HttpConfig::default();
    let http = HttpConfig {
        base_url: std::env::var("DEEPNOTE_BASE_URL").unwrap_or(d.base_url.clone()),
        model: std::env::var("DEEPNOTE_MODEL").unwrap_or(d.model.clone()),
        requests_per_minute: Some(60),
        ..d
    };
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
    ])?;
    let index = Arc::new(Bm25Index::build(Arc::new(corpus), Bm25Params::default())?);
    let cfg = EngineConfig {
        model: http.model.clone(),
        ..Default::default()
    };
    let engine = NoteEngine::new(cfg, index, Arc::new(HttpBackend::new(http)?))?;
    let r = engine.run(&q).map_err(|a| a.error)?;
    println!("{}", r.answer);
    eprintln!(
        "steps={} failures={} retrievals={}",
        r.steps_executed, r.failures, r.retrieval_count_total
    );
    Ok(())
}
