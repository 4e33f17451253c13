//! Fixtures shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use deepnote::corpus::{Corpus, Passage};
use deepnote::engine::{EngineConfig, NoteEngine};
use deepnote::llm::{ScriptEntry, ScriptedBackend};
use deepnote::prompts::{PromptKit, TemplateName};
use deepnote::retrieval::{Bm25Index, Bm25Params};

pub fn passages() -> Vec<Passage> {
    vec![
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
        Passage::new(
            "p4",
            "Kiss and Kill",
            "Kiss and Kill is a 1918 film directed by Alfred Hitchcock's mentor.",
        ),
        Passage::new("p5", "Paris", "Paris is the capital and largest city of France."),
        Passage::new(
            "p6",
            "Oder",
            "The Oder is a river in Central Europe that flows past Szczecin.",
        ),
    ]
}

pub fn index() -> Arc<Bm25Index> {
    let corpus = Corpus::new(passages()).unwrap();
    Arc::new(Bm25Index::build(Arc::new(corpus), Bm25Params::default()).unwrap())
}

/// Substrings that identify each prompt kind in a keyed script.
pub const INIT_KEY: &str = "Based on the provided document content, write a note.";
pub const QR_KEY: &str = "propose two new questions";
pub const KA_KEY: &str = "supplement the notes with content not yet included";
pub const ARD_KEY: &str = "determine which note is better";
pub const ANS_KEY: &str = "Only give me the answer";

/// One adaptive-step verdict as scripted for the decision prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    True,
    False,
    Garbage,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::True, Verdict::False, Verdict::Garbage];

    pub fn reply(self) -> &'static str {
        match self {
            Verdict::True => r#"json {"status":"True"}"#,
            Verdict::False => r#"json {"status":"False"}"#,
            Verdict::Garbage => "Both notes look fine to me.",
        }
    }
}

/// Keyed script: initial note `NOTE0`, for step k two fresh queries and a
/// candidate note `CAND-k`, the k-th verdict, and a final answer.
pub fn session_script(q0_tag: &str, verdicts: &[Verdict]) -> Vec<ScriptEntry> {
    let mut s = vec![ScriptEntry::matching(INIT_KEY, "NOTE0")];
    for (i, v) in verdicts.iter().enumerate() {
        let k = i + 1;
        s.push(ScriptEntry::matching(
            QR_KEY,
            format!("1. {q0_tag} Bogislaw death place hop {k}\n2. {q0_tag} Stettin river hop {k}"),
        ));
        s.push(ScriptEntry::matching(KA_KEY, format!("CAND-{k}")));
        s.push(ScriptEntry::matching(ARD_KEY, v.reply()));
    }
    s.push(ScriptEntry::matching(ANS_KEY, "Stettin"));
    s
}

pub fn engine(max_step: usize, max_failure: usize, backend: Arc<ScriptedBackend>) -> NoteEngine {
    let cfg = EngineConfig {
        max_step,
        max_failure,
        ..Default::default()
    };
    NoteEngine::new(cfg, index(), backend).unwrap()
}

/// What a session should do, worked out by hand from the stop rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expected {
    Completed {
        steps: usize,
        failures: usize,
        best: String,
        adaptive: usize,
    },
    /// The loop wanted another step but the script had no verdict left.
    NeedsMore { steps_done: usize },
}

pub fn oracle(max_step: usize, max_failure: usize, verdicts: &[Verdict]) -> Expected {
    let (mut steps, mut failures) = (0, 0);
    let mut best = "NOTE0".to_string();
    loop {
        if steps >= max_step || failures >= max_failure {
            return Expected::Completed {
                steps,
                failures,
                best,
                adaptive: 2 * steps,
            };
        }
        let Some(v) = verdicts.get(steps) else {
            return Expected::NeedsMore { steps_done: steps };
        };
        steps += 1;
        if *v == Verdict::True {
            best = format!("CAND-{steps}");
        } else {
            failures += 1;
        }
    }
}

/// Every sequence over the three verdicts of length 0..=max_len.
pub fn all_sequences(max_len: usize) -> Vec<Vec<Verdict>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for v in Verdict::ALL {
                let mut s: Vec<Verdict> = seq.clone();
                s.push(v);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn sentinel(name: &str) -> String {
    format!("@@{}@@", name.to_uppercase())
}

/// Renders `name` with every placeholder bound to its sentinel.
pub fn render_with_sentinels(kit: &PromptKit, name: TemplateName) -> String {
    let t = kit.template(name);
    let values: Vec<(String, String)> = t.placeholders().iter().map(|p| (p.to_string(), sentinel(p))).collect();
    let map: HashMap<&str, &str> = values.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    t.render(&map).unwrap()
}

pub fn golden(name: TemplateName) -> String {
    let path = format!("{}/tests/golden/{}.txt", env!("CARGO_MANIFEST_DIR"), name.file_stem());
    std::fs::read_to_string(path).unwrap()
}

pub const JUDGE_INIT_KEY: &str = "evaluate and score these notes";
pub const JUDGE_QR_KEY: &str = "list of new questions generated";

/// Generator and judge scripts for a sequential preference-data build over
/// `questions`. Answer candidates for question i contain `golds[i]` only at
/// the grid position `hit[i]`, if any.
pub fn dnalign_scripts(questions: &[&str], hit: &[Option<usize>]) -> (Vec<ScriptEntry>, Vec<ScriptEntry>) {
    let mut generator = Vec::new();
    let mut judge = Vec::new();
    for (n, q) in questions.iter().enumerate() {
        for i in 1..=9 {
            generator.push(ScriptEntry::matching(INIT_KEY, format!("note {n}.{i} about {q}")));
        }
        judge.push(ScriptEntry::matching(
            JUDGE_INIT_KEY,
            r#"json {"best_id": 2, "worst_id": 7}"#,
        ));
    }
    for (n, _) in questions.iter().enumerate() {
        for i in 1..=9 {
            generator.push(ScriptEntry::matching(
                QR_KEY,
                format!("1. Bogislaw XIII death place {n}.{i}\n2. Stettin Oder river {n}.{i}"),
            ));
        }
        judge.push(ScriptEntry::matching(JUDGE_QR_KEY, r#"{"best_id": 1, "worst_id": 9}"#));
    }
    for (n, _) in questions.iter().enumerate() {
        for i in 1..=9 {
            generator.push(ScriptEntry::matching(KA_KEY, format!("extended note {n}.{i}")));
            let status = if (n + i) % 3 == 0 { "True" } else { "False" };
            judge.push(ScriptEntry::matching(ARD_KEY, format!(r#"{{"status":"{status}"}}"#)));
        }
    }
    for (n, _) in questions.iter().enumerate() {
        for i in 0..9 {
            let text = if hit[n] == Some(i) {
                "Stettin".to_string()
            } else {
                format!("Paris {i}")
            };
            generator.push(ScriptEntry::matching(ANS_KEY, text));
        }
    }
    (generator, judge)
}

pub fn write_script(path: &std::path::Path, entries: &[ScriptEntry]) {
    let text: String = entries
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

pub fn write_corpus(path: &std::path::Path) {
    let text: String = passages()
        .iter()
        .map(|p| serde_json::json!({"id": p.id, "title": p.title, "text": p.text}).to_string() + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}
