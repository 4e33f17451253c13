use std::sync::Arc;

use super::*;
use crate::corpus::Corpus;
use crate::llm::{ScriptEntry, ScriptedBackend};
use crate::retrieval::{Bm25Index, Bm25Params};

fn index() -> Arc<Bm25Index> {
    let corpus = Corpus::new(vec![
        Passage::new(
            "p1",
            "Anna of Pomerania",
            "Anna of Pomerania was the daughter of Bogislaw XIII.",
        ),
        Passage::new("p2", "Bogislaw XIII", "Bogislaw XIII died in Stettin in 1606."),
        Passage::new("p3", "Stettin", "Stettin is also known as Szczecin."),
        Passage::new("p4", "Unrelated", "A British silent adventure film."),
    ])
    .unwrap();
    Arc::new(Bm25Index::build(Arc::new(corpus), Bm25Params::default()).unwrap())
}

fn engine(max_step: usize, max_failure: usize, script: Vec<ScriptEntry>) -> (NoteEngine, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(script));
    let cfg = EngineConfig {
        max_step,
        max_failure,
        ..Default::default()
    };
    let e = NoteEngine::new(cfg, index(), backend.clone()).unwrap();
    (e, backend)
}

fn status(v: bool) -> String {
    format!("json {{\"status\":\"{}\"}}", if v { "True" } else { "False" })
}

/// init, then (qr, ka, ard) per decision, then the answer.
fn script(decisions: &[Option<bool>]) -> Vec<ScriptEntry> {
    let mut s = vec![ScriptEntry::any("NOTE0")];
    for (i, d) in decisions.iter().enumerate() {
        let step = i + 1;
        s.push(ScriptEntry::any(format!(
            "1. Who was the father in step {step}?\n2. Where did he die, step {step}?"
        )));
        s.push(ScriptEntry::any(format!("N{step}")));
        s.push(ScriptEntry::any(match d {
            Some(v) => status(*v),
            None => "I cannot decide.".to_string(),
        }));
    }
    s.push(ScriptEntry::any("Stettin"));
    s
}

#[test]
fn initialize_echoes_backend_note() {
    let (e, _) = engine(3, 2, vec![ScriptEntry::any("NOTE0")]);
    let (note, hits) = e.initialize_note("Where did Bogislaw XIII die?").unwrap();
    assert_eq!(
        note,
        Note {
            text: "NOTE0".into(),
            origin_step: 0
        }
    );
    assert!(!hits.is_empty());
}

#[test]
fn initialize_with_no_hits_renders_empty_refs() {
    let (e, b) = engine(3, 2, vec![ScriptEntry::any("nothing found")]);
    let (note, hits) = e.initialize_note("zzzz qqqq").unwrap();
    assert!(hits.is_empty());
    assert_eq!(note.text, "nothing found");
    assert!(b.prompts()[0].contains("Document content: \n"));
}

#[test]
fn initialize_rejects_empty_question_and_empty_note() {
    let (e, _) = engine(3, 2, vec![ScriptEntry::any("   ")]);
    assert!(matches!(e.initialize_note(""), Err(Error::Precondition(_))));
    assert!(matches!(e.initialize_note("Stettin?"), Err(Error::EmptyInitialNote)));
}

fn fresh_state(q0: &str) -> SessionState {
    SessionState::new(
        q0,
        Note {
            text: "NOTE0".into(),
            origin_step: 0,
        },
        Vec::new(),
    )
}

#[test]
fn refine_returns_novel_queries_and_logs_them() {
    let (e, _) = engine(
        3,
        2,
        vec![ScriptEntry::any(
            "1. Who was Anna's father?\n2. Where did Bogislaw die?",
        )],
    );
    let mut st = fresh_state("Where did Anna's father die?");
    let q = e.refine_queries(&mut st).unwrap().unwrap();
    assert_eq!(q.len(), 2);
    assert_eq!(st.query_log, q);
}

#[test]
fn refine_drops_repeats_of_logged_queries_and_q0() {
    let (e, _) = engine(
        3,
        2,
        vec![ScriptEntry::any("1. who was annas FATHER\n2. Where did Bogislaw die?")],
    );
    let mut st = fresh_state("Where did Anna's father die?");
    st.query_log.push("Who was Anna's father?".into());
    let q = e.refine_queries(&mut st).unwrap().unwrap();
    assert_eq!(q, ["Where did Bogislaw die?"]);
    assert_eq!(st.query_log.len(), 2);

    let (e, _) = engine(3, 2, vec![ScriptEntry::any("1. Where did Anna's father die?")]);
    let mut st = fresh_state("Where did Anna's father die?");
    assert_eq!(e.refine_queries(&mut st).unwrap(), None);
}

#[test]
fn refine_prose_without_list_uses_line_fallback_or_fails() {
    let (e, _) = engine(3, 2, vec![ScriptEntry::any("")]);
    let mut st = fresh_state("q0 here");
    assert_eq!(e.refine_queries(&mut st).unwrap(), None);
    assert!(st.query_log.is_empty());
}

#[test]
fn accumulate_merges_and_dedups_hits() {
    let (e, b) = engine(3, 2, vec![ScriptEntry::any("N1")]);
    let st = fresh_state("Where did Anna's father die?");
    let queries = vec!["Bogislaw XIII".to_string(), "Bogislaw Stettin".to_string()];
    let (note, retrieved) = e.accumulate(&st, &queries, 1).unwrap();
    assert_eq!(
        note,
        Some(Note {
            text: "N1".into(),
            origin_step: 1
        })
    );
    assert_eq!(retrieved.len(), 2);
    let prompt = &b.prompts()[0];
    // p2 matches both queries but is listed once.
    assert_eq!(prompt.matches("Bogislaw XIII died in Stettin").count(), 1);
    let blocks = prompt.matches("\n[").count() + usize::from(prompt.contains("document: [1]"));
    assert!(blocks <= 2 * e.config().top_k);
}

#[test]
fn accumulate_orders_by_max_score_then_id() {
    let (e, b) = engine(3, 2, vec![ScriptEntry::any("N1")]);
    let st = fresh_state("q");
    let (_, retrieved) = e
        .accumulate(&st, &["stettin".to_string(), "film".to_string()], 1)
        .unwrap();
    let mut all: Vec<(f64, String)> = retrieved
        .iter()
        .flat_map(|r| r.hits.iter().map(|h| (h.score, h.passage_id.clone())))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.dedup_by(|a, b| a.1 == b.1);
    let prompt = &b.prompts()[0];
    let positions: Vec<usize> = all
        .iter()
        .map(|(_, id)| {
            let text = &e.retriever().passage(id).unwrap().text;
            prompt.find(text.as_str()).unwrap()
        })
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn accumulate_empty_reply_is_no_candidate() {
    let (e, _) = engine(3, 2, vec![ScriptEntry::any("  \n")]);
    let (note, _) = e.accumulate(&fresh_state("q"), &["stettin".into()], 1).unwrap();
    assert!(note.is_none());
    assert!(e.accumulate(&fresh_state("q"), &[], 1).is_err());
}

#[test]
fn decide_maps_replies() {
    let cand = Note {
        text: "N1".into(),
        origin_step: 1,
    };
    for (reply, want) in [
        (status(true), Decision::Improved),
        (status(false), Decision::NotImproved),
        ("garbage".to_string(), Decision::Unparseable),
    ] {
        let (e, b) = engine(3, 2, vec![ScriptEntry::any(reply)]);
        assert_eq!(e.decide(&fresh_state("q"), &cand).unwrap(), want);
        let p = &b.prompts()[0];
        assert!(p.contains("Provided Note 1: NOTE0") && p.contains("Provided Note 2: N1"));
    }
}

#[test]
fn run_true_false_false_under_3_2() {
    let (e, b) = engine(3, 2, script(&[Some(true), Some(false), Some(false)]));
    let r = e.run("Where did Anna of Pomerania's father die?").unwrap();
    assert_eq!(r.steps_executed, 3);
    assert_eq!(r.failures, 2);
    assert_eq!(r.final_best_note.as_ref().unwrap().text, "N1");
    assert_eq!(r.retrieval_count_adaptive, 6);
    assert_eq!(r.retrieval_count_total, 7);
    assert_eq!(r.answer, "Stettin");
    assert_eq!(b.remaining(), 0);
    // Answer prompt is conditioned on the best note only.
    assert!(b
        .prompts()
        .last()
        .unwrap()
        .contains("The following are given notes:\nN1\n"));
}

#[test]
fn run_single_step_bound() {
    for d in [true, false] {
        let (e, _) = engine(1, 1, script(&[Some(d)]));
        let r = e.run("Where did Bogislaw XIII die?").unwrap();
        assert_eq!(r.steps_executed, 1);
    }
}

#[test]
fn run_true_false_under_3_1_stops_on_failure() {
    let (e, _) = engine(3, 1, script(&[Some(true), Some(false)]));
    let r = e.run("What city was the author born in?").unwrap();
    assert_eq!(r.steps_executed, 2);
    assert_eq!(r.failures, 1);
    assert_eq!(r.final_best_note.unwrap().text, "N1");
}

#[test]
fn parse_failure_counts_as_failure() {
    let (e, _) = engine(2, 2, script(&[None, Some(true)]));
    let r = e.run("q about Stettin").unwrap();
    assert_eq!(r.steps_executed, 2);
    assert_eq!(r.failures, 1);
    assert_eq!(r.traces[0].decision, Decision::Unparseable);
    assert_eq!(r.final_best_note.unwrap().text, "N2");
}

#[test]
fn refinement_failure_skips_retrieval() {
    let s = vec![
        ScriptEntry::any("NOTE0"),
        ScriptEntry::any(""),
        ScriptEntry::any("final"),
    ];
    let (e, _) = engine(1, 1, s);
    let r = e.run("q about Stettin").unwrap();
    assert_eq!(r.traces[0].decision, Decision::NoQueries);
    assert_eq!(r.retrieval_count_adaptive, 0);
    assert_eq!(r.retrieval_count_total, 1);
}

#[test]
fn backend_error_aborts_with_partial_state() {
    // Script runs out during step 2's accumulation.
    let mut s = script(&[Some(true)]);
    s.pop();
    s.push(ScriptEntry::any("1. another question here"));
    let (e, _) = engine(3, 2, s);
    let abort = e.run("q about Stettin").unwrap_err();
    assert!(matches!(abort.error, Error::Llm(_)));
    let st = abort.state.unwrap();
    assert_eq!(st.traces.len(), 1);
    assert_eq!(st.best_note.text, "N1");
}

#[test]
fn vanilla_and_init_only_retrieve_once() {
    let (e, b) = engine(3, 2, vec![ScriptEntry::any("Stettin")]);
    let r = e.run_vanilla("Where did Bogislaw XIII die?").unwrap();
    assert_eq!((r.retrieval_count_adaptive, r.retrieval_count_total), (0, 1));
    assert!(b.prompts()[0].contains("Bogislaw XIII died in Stettin"));

    let (e, b) = engine(3, 2, vec![ScriptEntry::any("NOTE0"), ScriptEntry::any("Stettin")]);
    let r = e.run_init_only("Where did Bogislaw XIII die?").unwrap();
    assert_eq!((r.retrieval_count_adaptive, r.retrieval_count_total), (0, 1));
    assert_eq!(b.prompts().len(), 2);
    assert_eq!(r.reference, "NOTE0");
}

#[test]
fn config_rejects_failure_above_step() {
    let cfg = EngineConfig {
        max_step: 2,
        max_failure: 3,
        ..Default::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::InvalidParameter(_))));
}

#[test]
fn determinism_across_runs() {
    let run = || {
        let (e, b) = engine(3, 2, script(&[Some(true), None, Some(true)]));
        let r = e.run("Where did Anna of Pomerania's father die?").unwrap();
        (serde_json::to_string(&r).unwrap(), b.prompts())
    };
    assert_eq!(run(), run());
}

#[test]
fn normalize_query_rule() {
    assert_eq!(normalize_query("  Who  was Anna's FATHER? "), "who was annas father");
}
