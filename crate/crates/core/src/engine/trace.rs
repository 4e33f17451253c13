//! Line-delimited session export.
//!
//! One JSON object per session. Aborted sessions are written too, with
//! `error` set and whatever traces existed at the time.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnswerResult, IterationTrace, Mode, Note, SessionAbort};
use crate::retrieval::ScoredPassage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub q0: String,
    pub mode: Mode,
    pub answer: Option<String>,
    /// Text the answer was conditioned on.
    pub reference: Option<String>,
    pub initial_note: Option<Note>,
    pub final_best_note: Option<Note>,
    pub init_retrieved: Vec<ScoredPassage>,
    pub traces: Vec<IterationTrace>,
    pub steps_executed: usize,
    pub failures: usize,
    pub retrieval_count_adaptive: usize,
    pub retrieval_count_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionRecord {
    pub fn from_result(id: &str, q0: &str, r: &AnswerResult) -> Self {
        SessionRecord {
            id: id.to_string(),
            q0: q0.to_string(),
            mode: r.mode,
            answer: Some(r.answer.clone()),
            reference: Some(r.reference.clone()),
            initial_note: r.initial_note.clone(),
            final_best_note: r.final_best_note.clone(),
            init_retrieved: r.init_retrieved.clone(),
            traces: r.traces.clone(),
            steps_executed: r.steps_executed,
            failures: r.failures,
            retrieval_count_adaptive: r.retrieval_count_adaptive,
            retrieval_count_total: r.retrieval_count_total,
            error: None,
        }
    }

    pub fn from_abort(id: &str, q0: &str, mode: Mode, abort: &SessionAbort) -> Self {
        let (initial, best, init_hits, traces, steps, failures) = match &abort.state {
            Some(s) => (
                Some(s.initial_note.clone()),
                Some(s.best_note.clone()),
                s.init_retrieved.clone(),
                s.traces.clone(),
                s.steps_executed,
                s.failures,
            ),
            None => (None, None, Vec::new(), Vec::new(), 0, 0),
        };
        let adaptive = traces.iter().map(|t| t.retrieved.len()).sum();
        let init_done = initial.is_some() || !init_hits.is_empty();
        SessionRecord {
            id: id.to_string(),
            q0: q0.to_string(),
            mode,
            answer: None,
            reference: None,
            initial_note: initial,
            final_best_note: best,
            init_retrieved: init_hits,
            traces,
            steps_executed: steps,
            failures,
            retrieval_count_adaptive: adaptive,
            retrieval_count_total: adaptive + usize::from(init_done),
            error: Some(abort.error.to_string()),
        }
    }

    pub fn from_outcome(
        id: &str,
        q0: &str,
        mode: Mode,
        outcome: &std::result::Result<AnswerResult, SessionAbort>,
    ) -> Self {
        match outcome {
            Ok(r) => Self::from_result(id, q0, r),
            Err(a) => Self::from_abort(id, q0, mode, a),
        }
    }
}

/// Appends session records to a file, one line each.
pub struct SessionWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl SessionWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(SessionWriter {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn write(&mut self, record: &SessionRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_sessions(path: impl AsRef<Path>, records: &[SessionRecord]) -> Result<()> {
    let mut w = SessionWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn read_sessions(path: impl AsRef<Path>) -> Result<Vec<SessionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
