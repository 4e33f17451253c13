//! Retrieval corpora and QA datasets.
//!
//! Both are line-delimited JSON. A corpus line is
//! `{"id": "...", "title": "...", "text": "..."}` (title optional); a dataset
//! line is `{"id", "question", "answers": [...]}` or, for long-form tasks,
//! `{"id", "question", "qa_pairs": [{"sub_question", "aliases": [...]}]}`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::retrieval::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// The string that gets indexed: title and text joined by a space.
    pub fn index_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }

    pub fn token_len(&self) -> usize {
        tokenize(&self.index_text()).len()
    }
}

/// An immutable, validated passage collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    passages: Vec<Passage>,
    avg_doc_len: f64,
}

impl Corpus {
    /// Validates ids and texts and computes length statistics.
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(passages.len());
        for p in &passages {
            if p.text.trim().is_empty() {
                return Err(Error::Schema(format!("passage `{}` has empty text", p.id)));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        let total: usize = passages.iter().map(Passage::token_len).sum();
        let avg_doc_len = total as f64 / passages.len() as f64;
        Ok(Corpus { passages, avg_doc_len })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn doc_count(&self) -> usize {
        self.passages.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn get(&self, ordinal: usize) -> Option<&Passage> {
        self.passages.get(ordinal)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.passages {
            let line = serde_json::to_string(p).expect("passage serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct PassageRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

/// Reads a line-delimited corpus file. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut passages = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let rec: PassageRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        passages.push(Passage {
            id: rec.id,
            title: rec.title.unwrap_or_default(),
            text: rec.text,
        });
    }
    Corpus::new(passages)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((i + 1, line));
    }
    Ok(lines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStyle {
    Multihop,
    Longform,
    Shortform,
}

impl fmt::Display for TaskStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskStyle::Multihop => "multihop",
            TaskStyle::Longform => "longform",
            TaskStyle::Shortform => "shortform",
        })
    }
}

impl FromStr for TaskStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multihop" => Ok(TaskStyle::Multihop),
            "longform" => Ok(TaskStyle::Longform),
            "shortform" => Ok(TaskStyle::Shortform),
            other => Err(Error::InvalidParameter(format!("unknown task style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub sub_question: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    #[serde(default, rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_pairs: Option<Vec<QaPair>>,
}

#[derive(Deserialize)]
struct ExampleRecord {
    id: Option<String>,
    question: String,
    #[serde(default)]
    answers: Option<Vec<String>>,
    #[serde(default)]
    qa_pairs: Option<Vec<QaPair>>,
}

/// Reads a dataset file and checks each record against `style`.
///
/// Multi-hop and short-form records need a non-empty `answers` list
/// (short-form golds must be `yes`/`no`); long-form records need non-empty
/// `qa_pairs` whose entries each carry at least one alias. Records without
/// an `id` get their 1-based line number.
pub fn load_dataset(path: impl AsRef<Path>, style: TaskStyle) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let id = rec.id.unwrap_or_else(|| lineno.to_string());
        let schema = |msg: &str| Error::Schema(format!("{}:{lineno} ({id}): {msg}", path.display()));
        if rec.question.trim().is_empty() {
            return Err(schema("empty question"));
        }
        let example = match style {
            TaskStyle::Multihop | TaskStyle::Shortform => {
                let answers = rec.answers.unwrap_or_default();
                if answers.is_empty() {
                    return Err(schema("missing `answers` for this task style"));
                }
                if style == TaskStyle::Shortform
                    && !answers
                        .iter()
                        .all(|a| matches!(a.trim().to_ascii_lowercase().as_str(), "yes" | "no"))
                {
                    return Err(schema("short-form answers must be `yes` or `no`"));
                }
                QaExample {
                    id,
                    question: rec.question,
                    gold_answers: answers,
                    qa_pairs: None,
                }
            }
            TaskStyle::Longform => {
                let pairs = rec.qa_pairs.unwrap_or_default();
                if pairs.is_empty() {
                    return Err(schema("missing `qa_pairs` for long-form style"));
                }
                if pairs.iter().any(|p| p.aliases.is_empty()) {
                    return Err(schema("every qa_pair needs at least one alias"));
                }
                QaExample {
                    id,
                    question: rec.question,
                    gold_answers: rec.answers.unwrap_or_default(),
                    qa_pairs: Some(pairs),
                }
            }
        };
        out.push(example);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_passages() {
        let f = write_tmp(
            r#"{"id":"a","title":"","text":"x y"}
{"id":"b","text":"x y z"}
{"id":"c","title":"","text":"w"}
"#,
        );
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.doc_count(), 3);
        assert_eq!(c.avg_doc_len(), 2.0);
        assert_eq!(c.passages()[1].title, "");
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_tmp(
            r#"{"id":"a","text":"one"}
{"id":"a","text":"two"}
"#,
        );
        match load_corpus(f.path()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"one\"}\n{not json}\n");
        match load_corpus(f.path()) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }

    #[test]
    fn blank_text_is_rejected() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"   \"}\n");
        assert!(matches!(load_corpus(f.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("");
        assert!(matches!(load_corpus(f.path()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn save_then_load_round_trips() {
        let f = write_tmp(
            r#"{"id":"z","title":"T","text":"alpha beta"}
{"id":"a","text":"gamma"}
"#,
        );
        let c = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        c.save(out.path()).unwrap();
        assert_eq!(load_corpus(out.path()).unwrap(), c);
    }

    #[test]
    fn multihop_dataset() {
        let f = write_tmp(
            r#"{"id":"q1","question":"Where was the place of death of Anna Of Pomerania's father?","answers":["Stettin"]}"#,
        );
        let ds = load_dataset(f.path(), TaskStyle::Multihop).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].gold_answers, vec!["Stettin".to_string()]);
    }

    #[test]
    fn longform_dataset_keeps_qa_pairs() {
        let f = write_tmp(
            r#"{"id":"l1","question":"Who won?","qa_pairs":[{"sub_question":"A?","aliases":["x"]},{"sub_question":"B?","aliases":["y","z"]}]}"#,
        );
        let ds = load_dataset(f.path(), TaskStyle::Longform).unwrap();
        assert_eq!(ds[0].qa_pairs.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn shortform_yes_is_valid() {
        let f = write_tmp(r#"{"id":"s1","question":"Is water wet?","answers":["yes"]}"#);
        assert!(load_dataset(f.path(), TaskStyle::Shortform).is_ok());
        let bad = write_tmp(r#"{"id":"s2","question":"Is water wet?","answers":["maybe"]}"#);
        assert!(matches!(
            load_dataset(bad.path(), TaskStyle::Shortform),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_gold_for_style_is_schema_error() {
        let f = write_tmp(r#"{"id":"q","question":"Who?"}"#);
        assert!(matches!(
            load_dataset(f.path(), TaskStyle::Multihop),
            Err(Error::Schema(_))
        ));
        let f = write_tmp(r#"{"id":"q","question":"Who?","answers":["x"]}"#);
        assert!(matches!(
            load_dataset(f.path(), TaskStyle::Longform),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn dataset_preserves_file_order() {
        let f = write_tmp(
            "{\"id\":\"b\",\"question\":\"q\",\"answers\":[\"1\"]}\n{\"id\":\"a\",\"question\":\"q\",\"answers\":[\"2\"]}\n",
        );
        let ids: Vec<_> = load_dataset(f.path(), TaskStyle::Multihop)
            .unwrap()
            .into_iter()
            .map(|e| e.id)
            .collect();
        assert_eq!(ids, ["b", "a"]);
    }
}
