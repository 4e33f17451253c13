//! Batch evaluation and trace export over scripted sessions.

mod common;

use std::sync::Arc;

use deepnote::corpus::{QaExample, QaPair, TaskStyle};
use deepnote::engine::{read_sessions, write_sessions, EngineConfig, Mode, NoteEngine};
use deepnote::llm::{ScriptEntry, ScriptedBackend};
use deepnote::metrics::{evaluate, EvalOptions, EvalReport};
use deepnote::Error;

use common::Verdict;

fn example(id: &str, q: &str, gold: &str) -> QaExample {
    QaExample {
        id: id.into(),
        question: q.into(),
        gold_answers: vec![gold.into()],
        qa_pairs: None,
    }
}

/// A full session keyed on the question text, so sessions for different
/// questions can interleave.
fn keyed_session(q: &str, verdicts: &[Verdict], answer: &str) -> Vec<ScriptEntry> {
    let mut s = vec![ScriptEntry::matching(
        format!("Question to be answered: {q}\n"),
        format!("note for {q}"),
    )];
    for (i, v) in verdicts.iter().enumerate() {
        let k = i + 1;
        s.push(ScriptEntry::matching(
            format!("Original question: {q}\n"),
            format!("1. {q} follow-up Bogislaw {k}\n2. {q} follow-up Stettin {k}"),
        ));
        s.push(ScriptEntry::matching(
            format!("Question: {q}\nRetrieved document:"),
            format!("candidate {k} for {q}"),
        ));
        s.push(ScriptEntry::matching(
            format!("Question: {q}\nProvided Note 1:"),
            v.reply(),
        ));
    }
    s.push(ScriptEntry::matching(format!("Question: {q}\n\nAnswer:"), answer));
    s
}

fn engine_with(style: TaskStyle, entries: Vec<ScriptEntry>) -> (NoteEngine, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(entries));
    let cfg = EngineConfig {
        task_style: style,
        ..Default::default()
    };
    (NoteEngine::new(cfg, common::index(), backend.clone()).unwrap(), backend)
}

fn opts(mode: Mode, parallel: usize) -> EvalOptions {
    EvalOptions {
        mode,
        parallel,
        density: false,
    }
}

#[test]
fn two_examples_with_em_one_and_zero_average_fifty() {
    let data = vec![
        example("a", "Where did Bogislaw XIII die?", "Stettin"),
        example("b", "Which river flows past Szczecin?", "Oder"),
    ];
    let mut script = keyed_session(&data[0].question, &[], "Stettin");
    script.extend(keyed_session(&data[1].question, &[], "The Vistula"));
    let (e, _) = engine_with(TaskStyle::Multihop, script);
    let ev = evaluate(&e, &data, opts(Mode::Vanilla, 1)).unwrap();
    assert_eq!(ev.report.rows.len(), 2);
    assert_eq!(ev.report.summary.metrics["em"], 50.0);
    assert_eq!(ev.report.summary.metrics["acc"], 50.0);
    assert_eq!(ev.report.summary.errors, 0);
}

#[test]
fn vanilla_and_init_only_retrieve_once_per_example() {
    let data = vec![
        example("a", "Where did Bogislaw XIII die?", "Stettin"),
        example("b", "Which river flows past Szczecin?", "Oder"),
    ];
    for mode in [Mode::Vanilla, Mode::InitOnly] {
        let mut script = Vec::new();
        for ex in &data {
            script.extend(keyed_session(&ex.question, &[], "x"));
        }
        let (e, backend) = engine_with(TaskStyle::Multihop, script);
        let ev = evaluate(&e, &data, opts(mode, 2)).unwrap();
        for r in &ev.report.rows {
            assert_eq!((r.retrieval_counts.adaptive, r.retrieval_counts.total), (0, 1));
        }
        // Vanilla: answer only. Init-only: note, then answer.
        let calls = if mode == Mode::Vanilla { 2 } else { 4 };
        assert_eq!(backend.prompts().len(), calls, "{mode}");
    }
}

fn deepnote_dataset() -> (Vec<QaExample>, Vec<ScriptEntry>) {
    let specs: [(&str, &str, &[Verdict], &str); 5] = [
        (
            "q1",
            "Where did Anna of Pomerania's father die?",
            &[Verdict::True, Verdict::False, Verdict::False],
            "Stettin",
        ),
        (
            "q2",
            "What river flows past the city where Bogislaw XIII died?",
            &[Verdict::False, Verdict::False],
            "Oder river",
        ),
        (
            "q3",
            "Who directed Kiss and Kill?",
            &[Verdict::Garbage, Verdict::True, Verdict::True],
            "unknown",
        ),
        (
            "q4",
            "What is the capital of France?",
            &[Verdict::True, Verdict::True, Verdict::True],
            "Paris",
        ),
        (
            "q5",
            "Is Stettin also called Szczecin?",
            &[Verdict::False, Verdict::True, Verdict::False],
            "Szczecin",
        ),
    ];
    let golds = ["Stettin", "Oder", "Alfred Hitchcock", "Paris", "Szczecin"];
    let mut data = Vec::new();
    let mut script = Vec::new();
    for ((id, q, v, a), g) in specs.iter().zip(golds) {
        data.push(example(id, q, g));
        script.extend(keyed_session(q, v, a));
    }
    (data, script)
}

#[test]
fn evaluation_is_order_independent_under_parallelism() {
    let (data, script) = deepnote_dataset();
    let (e, _) = engine_with(TaskStyle::Multihop, script.clone());
    let forward = evaluate(&e, &data, opts(Mode::Deepnote, 4)).unwrap();

    let mut reversed = data.clone();
    reversed.reverse();
    let (e, _) = engine_with(TaskStyle::Multihop, script);
    let backward = evaluate(&e, &reversed, opts(Mode::Deepnote, 3)).unwrap();

    for (k, v) in &forward.report.summary.metrics {
        assert!((v - backward.report.summary.metrics[k]).abs() < 1e-12, "{k}");
    }
    let ids: Vec<_> = backward.report.rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["q5", "q4", "q3", "q2", "q1"]);
    for r in &forward.report.rows {
        let twin = backward.report.rows.iter().find(|b| b.id == r.id).unwrap();
        assert_eq!(r, twin);
    }
    let s = &forward.report.summary;
    assert_eq!(s.errors, 0);
    // acc: q1 q2 q4 q5 contain their gold.
    assert!((s.metrics["acc"] - 80.0).abs() < 1e-12);
    // Adaptive retrievals: 2 queries per step; steps 3, 2, 3, 3, 3.
    let adaptive: Vec<usize> = forward
        .report
        .rows
        .iter()
        .map(|r| r.retrieval_counts.adaptive)
        .collect();
    assert_eq!(adaptive, [6, 4, 6, 6, 6]);
    assert!((s.retrieval.mean_total - 33.0 / 5.0).abs() < 1e-12);
}

#[test]
fn failing_example_is_recorded_not_fatal() {
    let data = vec![
        example("ok", "Where did Bogislaw XIII die?", "Stettin"),
        example("broken", "Which river flows past Szczecin?", "Oder"),
    ];
    // No answer entry for the second question.
    let mut script = keyed_session(&data[0].question, &[Verdict::False, Verdict::False], "Stettin");
    let mut partial = keyed_session(&data[1].question, &[Verdict::True], "unused");
    partial.pop();
    script.extend(partial);
    let (e, _) = engine_with(TaskStyle::Multihop, script);
    let ev = evaluate(&e, &data, opts(Mode::Deepnote, 2)).unwrap();
    let broken = &ev.report.rows[1];
    assert!(broken.error.as_deref().unwrap().contains("script exhausted"));
    assert!(broken.metrics.values().all(|v| *v == 0.0));
    assert_eq!(ev.report.summary.errors, 1);
    assert_eq!(ev.report.summary.metrics["em"], 50.0);
    // The aborted session still carries its partial trace.
    let rec = &ev.sessions[1];
    assert!(rec.error.is_some());
    assert_eq!(rec.traces.len(), 1);
    assert_eq!(
        rec.final_best_note.as_ref().unwrap().text,
        "candidate 1 for Which river flows past Szczecin?"
    );
}

#[test]
fn empty_dataset_and_style_mismatch_are_errors() {
    let (e, _) = engine_with(TaskStyle::Multihop, vec![]);
    assert!(matches!(
        evaluate(&e, &[], EvalOptions::default()),
        Err(Error::Precondition(_))
    ));
    let (e, _) = engine_with(TaskStyle::Longform, vec![]);
    let data = vec![example("a", "q?", "x")];
    assert!(matches!(
        evaluate(&e, &data, EvalOptions::default()),
        Err(Error::Schema(_))
    ));
}

#[test]
fn longform_and_shortform_use_their_metrics() {
    let q = "Which cities are on the Oder?";
    let data = vec![QaExample {
        id: "lf".into(),
        question: q.into(),
        gold_answers: vec![],
        qa_pairs: Some(vec![
            QaPair {
                sub_question: "a".into(),
                aliases: vec!["Szczecin".into(), "Stettin".into()],
            },
            QaPair {
                sub_question: "b".into(),
                aliases: vec!["Frankfurt".into()],
            },
        ]),
    }];
    let (e, _) = engine_with(
        TaskStyle::Longform,
        vec![ScriptEntry::matching(
            format!("Question: {q}\nNotes:"),
            "Stettin lies on the Oder.",
        )],
    );
    let ev = evaluate(&e, &data, opts(Mode::Vanilla, 1)).unwrap();
    assert_eq!(ev.report.summary.metrics["str_em"], 50.0);
    assert_eq!(ev.report.summary.metrics["str_hit"], 0.0);

    let q = "Is Paris in France?";
    let data = vec![example("sf", q, "yes")];
    let (e, _) = engine_with(
        TaskStyle::Shortform,
        vec![ScriptEntry::matching(format!("Question: {q}\n\nAnswer:"), "Yes.")],
    );
    let ev = evaluate(&e, &data, opts(Mode::Vanilla, 1)).unwrap();
    assert_eq!(ev.report.summary.metrics["acc"], 100.0);
}

#[test]
fn reports_and_traces_round_trip() {
    let (data, script) = deepnote_dataset();
    let (e, _) = engine_with(TaskStyle::Multihop, script);
    let ev = evaluate(&e, &data, opts(Mode::Deepnote, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.jsonl");
    let traces = dir.path().join("traces.jsonl");
    ev.report.write(&report).unwrap();
    write_sessions(&traces, &ev.sessions).unwrap();
    assert_eq!(EvalReport::read(&report).unwrap(), ev.report);
    let back = read_sessions(&traces).unwrap();
    assert_eq!(back, ev.sessions);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 6);
    let first = &back[0];
    assert_eq!(first.traces.len(), 3);
    assert_eq!(
        first.reference.as_deref(),
        Some("candidate 1 for Where did Anna of Pomerania's father die?")
    );
}

#[test]
fn density_can_ride_along_with_evaluation() {
    let q = "Where did Bogislaw XIII die?";
    let mut script = keyed_session(q, &[], "Stettin");
    // The vanilla reference is the formatted passages; quote one clause.
    script.push(ScriptEntry::matching(
        "Identify the evidence",
        "died in Stettin on 7 March 1606",
    ));
    let (e, _) = engine_with(TaskStyle::Multihop, script);
    let ev = evaluate(
        &e,
        &[example("a", q, "Stettin")],
        EvalOptions {
            mode: Mode::Vanilla,
            parallel: 1,
            density: true,
        },
    )
    .unwrap();
    let d = ev.report.rows[0].density.unwrap();
    assert_eq!(d.evidence_tokens, 7);
    assert!(d.reference_tokens > 7);
    assert_eq!(ev.report.summary.density.unwrap().count, 1);
}
