//! One adaptive session against a scripted model, printing the trace.
//!
//! The script is keyed on a phrase from each prompt, so the replies line up
//! with the loop: initial note, then per step refined queries, a candidate
//! note and a verdict, then the answer.

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage};
use deepnote::engine::{EngineConfig, NoteEngine, SessionRecord};
use deepnote::llm::{ScriptEntry, ScriptedBackend};
use deepnote::retrieval::{Bm25Index, Bm25Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
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

    let script = vec![
        ScriptEntry::matching("write a note", "Anna's father was Bogislaw XIII."),
        ScriptEntry::matching(
            "propose two new questions",
            "1. Where did Bogislaw XIII die?\n2. When did Bogislaw XIII die?",
        ),
        ScriptEntry::matching(
            "supplement the notes",
            "Anna's father Bogislaw XIII died in Stettin in 1606.",
        ),
        ScriptEntry::matching("determine which note is better", r#"json {"status":"True"}"#),
        ScriptEntry::matching(
            "propose two new questions",
            "1. Is Stettin the same as Szczecin?\n2. Which river is Stettin on?",
        ),
        ScriptEntry::matching("supplement the notes", "Bogislaw XIII died in Stettin (Szczecin)."),
        ScriptEntry::matching("determine which note is better", r#"json {"status":"False"}"#),
        ScriptEntry::matching("Only give me the answer", "Stettin"),
    ];
    let backend = Arc::new(ScriptedBackend::new(script));
    let cfg = EngineConfig {
        max_step: 2,
        max_failure: 1,
        ..Default::default()
    };
    let engine = NoteEngine::new(cfg, index, backend.clone())?;

    let q = "Where did Anna of Pomerania's father die?";
    let result = engine.run(q).map_err(|a| a.error)?;
    println!("answer: {}", result.answer);
    println!(
        "steps={} failures={} retrievals={}",
        result.steps_executed, result.failures, result.retrieval_count_total
    );
    for t in &result.traces {
        println!("step {}: {:?} -> {:?}", t.step, t.refined_queries, t.decision);
    }
    println!("model calls: {}", backend.prompts().len());
    println!(
        "{}",
        serde_json::to_string_pretty(&SessionRecord::from_result("q0", q, &result))?
    );
    Ok(())
}
