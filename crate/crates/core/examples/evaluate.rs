//! Score a small dataset in vanilla and note-centric modes.

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage, QaExample};
use deepnote::engine::{EngineConfig, Mode, NoteEngine};
use deepnote::llm::{ScriptEntry, ScriptedBackend};
use deepnote::metrics::{evaluate, EvalOptions};
use deepnote::retrieval::{Bm25Index, Bm25Params};

fn example(id: &str, q: &str, gold: &str) -> QaExample {
    QaExample {
        id: id.into(),
        question: q.into(),
        gold_answers: vec![gold.into()],
        qa_pairs: None,
    }
}

/// Replies keyed on the question so parallel sessions can't steal each
/// other's entries. One improving step, then a rejected one.
fn session(q: &str, answer: &str) -> Vec<ScriptEntry> {
    let mut s = vec![ScriptEntry::matching(
        format!("Question to be answered: {q}\n"),
        format!("note on {q}"),
    )];
    for (k, verdict) in [(1, "True"), (2, "False")] {
        s.push(ScriptEntry::matching(
            format!("Original question: {q}\n"),
            format!("1. {q} detail {k}\n2. {q} context {k}"),
        ));
        s.push(ScriptEntry::matching(
            format!("Question: {q}\nRetrieved document:"),
            format!("better note {k}"),
        ));
        s.push(ScriptEntry::matching(
            format!("Question: {q}\nProvided Note 1:"),
            format!(r#"{{"status":"{verdict}"}}"#),
        ));
    }
    s.push(ScriptEntry::matching(format!("Question: {q}\n\nAnswer:"), answer));
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::new(vec![
        Passage::new(
            "p1",
            "Bogislaw XIII",
            "Bogislaw XIII, Duke of Pomerania, died in Stettin on 7 March 1606.",
        ),
        Passage::new(
            "p2",
            "Oder",
            "The Oder is a river in Central Europe that flows past Szczecin.",
        ),
    ])?;
    let index = Arc::new(Bm25Index::build(Arc::new(corpus), Bm25Params::default())?);
    let data = vec![
        example("a", "Where did Bogislaw XIII die?", "Stettin"),
        example("b", "Which river flows past Szczecin?", "Oder"),
    ];
    let answers = ["Stettin", "the Oder river"];

    for mode in [Mode::Vanilla, Mode::Deepnote] {
        let script: Vec<ScriptEntry> = data
            .iter()
            .zip(answers)
            .flat_map(|(ex, a)| session(&ex.question, a))
            .collect();
        let cfg = EngineConfig {
            max_step: 2,
            ..Default::default()
        };
        let engine = NoteEngine::new(cfg, index.clone(), Arc::new(ScriptedBackend::new(script)))?;
        let ev = evaluate(
            &engine,
            &data,
            EvalOptions {
                mode,
                parallel: 2,
                density: false,
            },
        )?;
        println!("{}", ev.report.summary.table());
        for row in &ev.report.rows {
            println!(
                "  {} pred={:?} retrievals={}",
                row.id, row.pred, row.retrieval_counts.total
            );
        }
    }
    Ok(())
}
