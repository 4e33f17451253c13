//! Prompt templates and the parsers for the structured replies they ask for.
//!
//! Templates are plain text files under `templates/`, compiled in by default
//! and overridable from a directory at runtime. Placeholders are written
//! `{name}`; literal braces are doubled (`{{`, `}}`).

mod parse;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::corpus::{Passage, TaskStyle};
use crate::{Error, Result};

pub use parse::{parse_best_worst, parse_queries, parse_status, BestWorst, DecisionValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    Init,
    Qr,
    Ka,
    Ard,
    AnsMultihop,
    AnsLongform,
    AnsShortform,
    JudgeInit,
    JudgeQr,
    EvidenceExtract,
}

impl TemplateName {
    pub const ALL: [TemplateName; 10] = [
        TemplateName::Init,
        TemplateName::Qr,
        TemplateName::Ka,
        TemplateName::Ard,
        TemplateName::AnsMultihop,
        TemplateName::AnsLongform,
        TemplateName::AnsShortform,
        TemplateName::JudgeInit,
        TemplateName::JudgeQr,
        TemplateName::EvidenceExtract,
    ];

    /// File stem under the templates directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateName::Init => "init",
            TemplateName::Qr => "qr",
            TemplateName::Ka => "ka",
            TemplateName::Ard => "ard",
            TemplateName::AnsMultihop => "ans_multihop",
            TemplateName::AnsLongform => "ans_longform",
            TemplateName::AnsShortform => "ans_shortform",
            TemplateName::JudgeInit => "judge_init",
            TemplateName::JudgeQr => "judge_qr",
            TemplateName::EvidenceExtract => "evidence_extract",
        }
    }

    pub fn answer_for(style: TaskStyle) -> Self {
        match style {
            TaskStyle::Multihop => TemplateName::AnsMultihop,
            TaskStyle::Longform => TemplateName::AnsLongform,
            TaskStyle::Shortform => TemplateName::AnsShortform,
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateName::Init => include_str!("../../templates/init.txt"),
            TemplateName::Qr => include_str!("../../templates/qr.txt"),
            TemplateName::Ka => include_str!("../../templates/ka.txt"),
            TemplateName::Ard => include_str!("../../templates/ard.txt"),
            TemplateName::AnsMultihop => include_str!("../../templates/ans_multihop.txt"),
            TemplateName::AnsLongform => include_str!("../../templates/ans_longform.txt"),
            TemplateName::AnsShortform => include_str!("../../templates/ans_shortform.txt"),
            TemplateName::JudgeInit => include_str!("../../templates/judge_init.txt"),
            TemplateName::JudgeQr => include_str!("../../templates/judge_qr.txt"),
            TemplateName::EvidenceExtract => include_str!("../../templates/evidence_extract.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// Splits a template body into literal text and placeholders.
fn pieces(body: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(pos) = rest.find(['{', '}']) {
        if pos > 0 {
            out.push(Piece::Text(&rest[..pos]));
        }
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push(Piece::Text("}"));
            rest = after;
        } else if tail.starts_with('{') {
            let end = tail
                .find('}')
                .ok_or_else(|| Error::Template(format!("unclosed `{{` near {:?}", snippet(tail))))?;
            let name = &tail[1..end];
            if !is_placeholder_name(name) {
                return Err(Error::Template(format!("bad placeholder {:?}", &tail[..=end])));
            }
            out.push(Piece::Placeholder(name));
            rest = &tail[end + 1..];
        } else {
            return Err(Error::Template(format!("stray `}}` near {:?}", snippet(tail))));
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    Ok(out)
}

fn snippet(s: &str) -> String {
    s.chars().take(30).collect()
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        pieces(&body)?;
        Ok(PromptTemplate { name, body })
    }

    pub fn builtin(name: TemplateName) -> Self {
        PromptTemplate {
            name,
            body: strip_final_newline(name.builtin()).to_string(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body).expect("validated at construction") {
            if let Piece::Placeholder(n) = p {
                if !seen.contains(&n) {
                    seen.push(n);
                }
            }
        }
        seen
    }

    /// Substitutes every placeholder; bound values are inserted verbatim and
    /// never re-expanded.
    pub fn render(&self, bindings: &HashMap<&str, &str>) -> Result<String> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for p in pieces(&self.body)? {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Placeholder(name) => {
                    let v = bindings
                        .get(name)
                        .ok_or_else(|| Error::UnboundPlaceholder(name.to_string()))?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`PromptTemplate::render`].
pub fn render(template: &PromptTemplate, bindings: &HashMap<&str, &str>) -> Result<String> {
    template.render(bindings)
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

/// `[i] title\ntext` blocks, numbered from 1, one per line group.
pub fn format_refs<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> String {
    passages
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.title.is_empty() {
                format!("[{}]\n{}", i + 1, p.text)
            } else {
                format!("[{}] {}\n{}", i + 1, p.title, p.text)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `1. q` lines; empty input renders as an empty string.
pub fn format_query_log(queries: &[String]) -> String {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {}", i + 1, q))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One `{"_id": i, "content": "..."}` line per candidate, ids from 1.
pub fn format_candidates(candidates: &[String]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let content = serde_json::to_string(c).expect("string serializes");
            format!("{{\"_id\": {}, \"content\": {}}}", i + 1, content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The full template set with typed rendering helpers.
#[derive(Debug, Clone)]
pub struct PromptKit {
    templates: HashMap<TemplateName, PromptTemplate>,
}

impl Default for PromptKit {
    fn default() -> Self {
        PromptKit {
            templates: TemplateName::ALL
                .iter()
                .map(|&n| (n, PromptTemplate::builtin(n)))
                .collect(),
        }
    }
}

impl PromptKit {
    /// Built-in templates, replaced by any `<stem>.txt` found in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut kit = PromptKit::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.file_stem()));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            kit.templates
                .insert(name, PromptTemplate::new(name, strip_final_newline(&body))?);
        }
        Ok(kit)
    }

    pub fn template(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn render(&self, name: TemplateName, bindings: &[(&str, &str)]) -> Result<String> {
        let map: HashMap<&str, &str> = bindings.iter().copied().collect();
        self.template(name).render(&map)
    }

    pub fn init(&self, query: &str, refs: &[&Passage]) -> Result<String> {
        let refs = format_refs(refs.iter().copied());
        self.render(TemplateName::Init, &[("query", query), ("refs", &refs)])
    }

    pub fn query_refinement(&self, query: &str, note: &str, query_log: &[String]) -> Result<String> {
        let log = format_query_log(query_log);
        self.render(
            TemplateName::Qr,
            &[("query", query), ("note", note), ("query_log", &log)],
        )
    }

    pub fn accumulate(&self, query: &str, refs: &[&Passage], note: &str) -> Result<String> {
        let refs = format_refs(refs.iter().copied());
        self.render(TemplateName::Ka, &[("query", query), ("refs", &refs), ("note", note)])
    }

    pub fn decide(&self, query: &str, best_note: &str, new_note: &str) -> Result<String> {
        self.render(
            TemplateName::Ard,
            &[("query", query), ("best_note", best_note), ("new_note", new_note)],
        )
    }

    pub fn answer(&self, style: TaskStyle, query: &str, note: &str) -> Result<String> {
        self.render(TemplateName::answer_for(style), &[("query", query), ("note", note)])
    }

    pub fn judge_init(&self, query: &str, refs: &[&Passage], notes: &[String]) -> Result<String> {
        let refs = format_refs(refs.iter().copied());
        let notes = format_candidates(notes);
        self.render(
            TemplateName::JudgeInit,
            &[("query", query), ("refs", &refs), ("notes", &notes)],
        )
    }

    pub fn judge_qr(&self, note: &str, query: &str, query_log: &[String], new_queries: &[String]) -> Result<String> {
        let log = format_query_log(query_log);
        let cands = format_candidates(new_queries);
        self.render(
            TemplateName::JudgeQr,
            &[
                ("notes", note),
                ("query", query),
                ("query_log", &log),
                ("new_querys", &cands),
            ],
        )
    }

    pub fn evidence(&self, query: &str, reference: &str) -> Result<String> {
        self.render(TemplateName::EvidenceExtract, &[("query", query), ("refs", reference)])
    }
}
