//! Build all four preference-pair stages for two questions with scripted
//! generator and judge models, then write them as JSONL.

use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage, QaExample};
use deepnote::dnalign::{write_pairs, DnalignBuilder, DnalignConfig, Stage};
use deepnote::llm::{ScriptEntry, ScriptedBackend};
use deepnote::retrieval::{Bm25Index, Bm25Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::new(vec![
        Passage::new(
            "p1",
            "Anna of Pomerania",
            "Anna of Pomerania was a daughter of Bogislaw XIII.",
        ),
        Passage::new("p2", "Bogislaw XIII", "Bogislaw XIII died in Stettin on 7 March 1606."),
        Passage::new(
            "p3",
            "Stettin",
            "Stettin, also known as Szczecin, is a city on the Oder river.",
        ),
    ])?;
    let index = Arc::new(Bm25Index::build(Arc::new(corpus), Bm25Params::default())?);
    let data: Vec<QaExample> = ["Where did Anna's father die?", "Where did Bogislaw XIII die?"]
        .iter()
        .enumerate()
        .map(|(i, q)| QaExample {
            id: format!("e{i}"),
            question: q.to_string(),
            gold_answers: vec!["Stettin".into()],
            qa_pairs: None,
        })
        .collect();

    // Nine candidates per prompt, one per sampling setting.
    let mut generator = Vec::new();
    let mut judge = Vec::new();
    for n in 0..data.len() {
        generator.extend((1..=9).map(|i| ScriptEntry::matching("write a note", format!("note {n}.{i}"))));
        judge.push(ScriptEntry::matching(
            "evaluate and score these notes",
            r#"{"best_id": 1, "worst_id": 9}"#,
        ));
    }
    for n in 0..data.len() {
        generator.extend((1..=9).map(|i| {
            ScriptEntry::matching(
                "propose two new questions",
                format!("1. Bogislaw XIII death {n}.{i}\n2. Stettin river {n}.{i}"),
            )
        }));
        judge.push(ScriptEntry::matching(
            "list of new questions generated",
            r#"{"best_id": 3, "worst_id": 4}"#,
        ));
    }
    for n in 0..data.len() {
        for i in 1..=9 {
            generator.push(ScriptEntry::matching(
                "supplement the notes",
                format!("extended note {n}.{i}"),
            ));
            let v = if i % 2 == 0 { "True" } else { "False" };
            judge.push(ScriptEntry::matching(
                "determine which note is better",
                format!(r#"{{"status":"{v}"}}"#),
            ));
        }
    }
    for _ in 0..data.len() {
        generator.extend(
            (0..9).map(|i| ScriptEntry::matching("Only give me the answer", if i == 4 { "Stettin" } else { "Berlin" })),
        );
    }

    let builder = DnalignBuilder::new(
        DnalignConfig::default(),
        index,
        Arc::new(ScriptedBackend::new(generator)),
        Arc::new(ScriptedBackend::new(judge)),
    )?;
    let out = builder.build(&data, &Stage::ALL)?;
    for s in Stage::ALL {
        let st = out.stage(s);
        println!("{s}: pairs={} skipped={}", st.pairs.len(), st.skipped.len());
    }
    let path = std::env::temp_dir().join("deepnote-example-pairs.jsonl");
    let n = write_pairs(&path, out.pairs(&Stage::ALL))?;
    println!("wrote {n} pairs to {}", path.display());
    let first = &out.ans.pairs[0];
    println!(
        "ans pair: chosen={:?} rejected={:?} scores={:?}/{:?}",
        first.chosen, first.rejected, first.meta.chosen_score, first.meta.rejected_score
    );
    Ok(())
}
