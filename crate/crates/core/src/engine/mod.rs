//! The note-centric adaptive retrieval loop.
//!
//! A session retrieves for the original question and writes an initial note,
//! which starts out as the best note. Each step then:
//!
//! 1. asks for new queries given the question, the best note and every query
//!    asked so far;
//! 2. retrieves for each surviving query and merges the hits;
//! 3. folds the merged passages into a candidate note;
//! 4. asks the model whether the candidate beats the best note. Only a
//!    `True` verdict replaces the best note; anything else is a failed update.
//!
//! The loop stops at `max_step` steps or `max_failure` failed updates, and
//! the answer is generated from the question and the best note alone.

mod trace;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, TaskStyle};
use crate::llm::{ChatRequest, GenerationBackend, SamplingConfig};
use crate::prompts::{format_refs, parse_queries, parse_status, PromptKit};
use crate::retrieval::{merge_results, Retriever, ScoredPassage};
use crate::{Error, Result};

pub use trace::{read_sessions, write_sessions, SessionRecord, SessionWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub top_k: usize,
    pub max_step: usize,
    pub max_failure: usize,
    pub queries_per_refinement: usize,
    pub task_style: TaskStyle,
    pub sampling: SamplingConfig,
    /// Passed through to the backend; empty uses the backend's default.
    pub model: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            top_k: 5,
            max_step: 3,
            max_failure: 2,
            queries_per_refinement: 2,
            task_style: TaskStyle::Multihop,
            sampling: SamplingConfig::default(),
            model: String::new(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        if self.max_step < 1 || self.max_failure < 1 {
            return Err(Error::InvalidParameter("max_step and max_failure must be >= 1".into()));
        }
        if self.max_failure > self.max_step {
            return Err(Error::InvalidParameter(format!(
                "max_failure ({}) cannot exceed max_step ({})",
                self.max_failure, self.max_step
            )));
        }
        if self.queries_per_refinement < 1 {
            return Err(Error::InvalidParameter("queries_per_refinement must be >= 1".into()));
        }
        self.sampling
            .validate()
            .map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub text: String,
    pub origin_step: usize,
}

/// What happened to a step's candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The judge returned `True`; the candidate became the best note.
    Improved,
    /// The judge returned `False`.
    NotImproved,
    /// The judge's reply had no status token.
    Unparseable,
    /// Query refinement produced nothing new; no retrieval happened.
    NoQueries,
    /// The accumulation reply was empty.
    EmptyCandidate,
}

impl Decision {
    pub fn is_failure(self) -> bool {
        self != Decision::Improved
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHits {
    pub query: String,
    pub hits: Vec<ScoredPassage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub step: usize,
    pub refined_queries: Vec<String>,
    pub retrieved: Vec<QueryHits>,
    pub candidate_note: Option<Note>,
    pub decision: Decision,
    pub best_updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub q0: String,
    pub query_log: Vec<String>,
    pub initial_note: Note,
    pub best_note: Note,
    pub failures: usize,
    pub steps_executed: usize,
    pub init_retrieved: Vec<ScoredPassage>,
    pub traces: Vec<IterationTrace>,
}

impl SessionState {
    fn new(q0: &str, initial: Note, init_retrieved: Vec<ScoredPassage>) -> Self {
        SessionState {
            q0: q0.to_string(),
            query_log: Vec::new(),
            best_note: initial.clone(),
            initial_note: initial,
            failures: 0,
            steps_executed: 0,
            init_retrieved,
            traces: Vec::new(),
        }
    }

    /// Retrievals issued by adaptive steps (initialization excluded).
    pub fn adaptive_retrievals(&self) -> usize {
        self.traces.iter().map(|t| t.retrieved.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full adaptive loop.
    Deepnote,
    /// Initial note only, then answer.
    InitOnly,
    /// One retrieval, answer straight from the passages.
    Vanilla,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Deepnote => "deepnote",
            Mode::InitOnly => "init-only",
            Mode::Vanilla => "vanilla",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepnote" => Ok(Mode::Deepnote),
            "init-only" => Ok(Mode::InitOnly),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub mode: Mode,
    pub answer: String,
    /// The text the answer prompt was conditioned on: the best note, or the
    /// formatted passages in vanilla mode.
    pub reference: String,
    pub initial_note: Option<Note>,
    pub final_best_note: Option<Note>,
    pub init_retrieved: Vec<ScoredPassage>,
    pub traces: Vec<IterationTrace>,
    pub steps_executed: usize,
    pub failures: usize,
    pub retrieval_count_adaptive: usize,
    pub retrieval_count_total: usize,
}

/// A session that hit an unrecoverable error. Whatever state existed at the
/// time is kept so partial traces can still be written.
#[derive(Debug)]
pub struct SessionAbort {
    pub error: Error,
    pub state: Option<Box<SessionState>>,
}

impl fmt::Display for SessionAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "session aborted: {}", self.error)
    }
}

impl std::error::Error for SessionAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize_query(q: &str) -> String {
    q.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone)]
pub struct NoteEngine {
    config: EngineConfig,
    retriever: Arc<dyn Retriever>,
    backend: Arc<dyn GenerationBackend>,
    prompts: Arc<PromptKit>,
}

impl NoteEngine {
    pub fn new(
        config: EngineConfig,
        retriever: Arc<dyn Retriever>,
        backend: Arc<dyn GenerationBackend>,
    ) -> Result<Self> {
        Self::with_prompts(config, retriever, backend, Arc::new(PromptKit::default()))
    }

    pub fn with_prompts(
        config: EngineConfig,
        retriever: Arc<dyn Retriever>,
        backend: Arc<dyn GenerationBackend>,
        prompts: Arc<PromptKit>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(NoteEngine {
            config,
            retriever,
            backend,
            prompts,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn prompts(&self) -> &PromptKit {
        &self.prompts
    }

    pub fn retriever(&self) -> &Arc<dyn Retriever> {
        &self.retriever
    }

    pub fn backend(&self) -> &Arc<dyn GenerationBackend> {
        &self.backend
    }

    fn complete(&self, prompt: String) -> Result<String> {
        let req = ChatRequest::new(prompt, self.config.sampling).with_model(self.config.model.clone());
        Ok(self.backend.complete(&req)?)
    }

    fn passages_for(&self, hits: &[ScoredPassage]) -> Vec<&Passage> {
        hits.iter()
            .filter_map(|h| self.retriever.passage(&h.passage_id))
            .collect()
    }

    /// Retrieves for `q0` and writes the initial note.
    pub fn initialize_note(&self, q0: &str) -> Result<(Note, Vec<ScoredPassage>)> {
        if q0.trim().is_empty() {
            return Err(Error::Precondition("question must be non-empty".into()));
        }
        let hits = self.retriever.search(q0, self.config.top_k)?;
        let prompt = self.prompts.init(q0, &self.passages_for(&hits))?;
        let text = self.complete(prompt)?.trim().to_string();
        if text.is_empty() {
            return Err(Error::EmptyInitialNote);
        }
        Ok((Note { text, origin_step: 0 }, hits))
    }

    /// Proposes new queries and appends the novel ones to the query log.
    /// `None` means nothing usable came back, which counts as a failed update.
    pub fn refine_queries(&self, state: &mut SessionState) -> Result<Option<Vec<String>>> {
        let prompt = self
            .prompts
            .query_refinement(&state.q0, &state.best_note.text, &state.query_log)?;
        let reply = self.complete(prompt)?;
        let proposed = match parse_queries(&reply, self.config.queries_per_refinement) {
            Ok(q) => q,
            Err(e) => {
                log::debug!("query refinement unparseable: {e}");
                return Ok(None);
            }
        };
        let mut seen: HashSet<String> = state
            .query_log
            .iter()
            .chain(std::iter::once(&state.q0))
            .map(|q| normalize_query(q))
            .collect();
        let fresh: Vec<String> = proposed
            .into_iter()
            .filter(|q| seen.insert(normalize_query(q)))
            .collect();
        if fresh.is_empty() {
            return Ok(None);
        }
        state.query_log.extend(fresh.iter().cloned());
        Ok(Some(fresh))
    }

    /// Retrieves for every query, merges hits by passage id (keeping the best
    /// score), and asks for an updated note. `None` if the reply was empty.
    pub fn accumulate(
        &self,
        state: &SessionState,
        queries: &[String],
        step: usize,
    ) -> Result<(Option<Note>, Vec<QueryHits>)> {
        if queries.is_empty() {
            return Err(Error::Precondition("accumulate needs at least one query".into()));
        }
        let mut retrieved = Vec::with_capacity(queries.len());
        for q in queries {
            let hits = self.retriever.search(q, self.config.top_k)?;
            retrieved.push(QueryHits { query: q.clone(), hits });
        }
        let merged = merge_results(retrieved.iter().map(|r| r.hits.as_slice()));
        let passages = self.passages_for(&merged);
        let prompt = self.prompts.accumulate(&state.q0, &passages, &state.best_note.text)?;
        let text = self.complete(prompt)?.trim().to_string();
        let note = (!text.is_empty()).then_some(Note {
            text,
            origin_step: step,
        });
        Ok((note, retrieved))
    }

    /// Judges `candidate` against the current best note.
    pub fn decide(&self, state: &SessionState, candidate: &Note) -> Result<Decision> {
        if candidate.text.is_empty() {
            return Err(Error::Precondition("candidate note is empty".into()));
        }
        let prompt = self.prompts.decide(&state.q0, &state.best_note.text, &candidate.text)?;
        let reply = self.complete(prompt)?;
        Ok(match parse_status(&reply) {
            Ok(v) if v.0 => Decision::Improved,
            Ok(_) => Decision::NotImproved,
            Err(e) => {
                log::debug!("decision unparseable: {e}");
                Decision::Unparseable
            }
        })
    }

    /// One refine → accumulate → decide step, applied to `state`.
    pub fn step(&self, state: &mut SessionState) -> Result<()> {
        let step = state.steps_executed + 1;
        let mut trace = IterationTrace {
            step,
            refined_queries: Vec::new(),
            retrieved: Vec::new(),
            candidate_note: None,
            decision: Decision::NoQueries,
            best_updated: false,
        };
        if let Some(queries) = self.refine_queries(state)? {
            let (candidate, retrieved) = self.accumulate(state, &queries, step)?;
            trace.refined_queries = queries;
            trace.retrieved = retrieved;
            trace.decision = match &candidate {
                Some(note) => self.decide(state, note)?,
                None => Decision::EmptyCandidate,
            };
            trace.candidate_note = candidate;
        }
        if trace.decision == Decision::Improved {
            state.best_note = trace.candidate_note.clone().expect("improved implies candidate");
            trace.best_updated = true;
        } else {
            state.failures += 1;
        }
        state.steps_executed = step;
        state.traces.push(trace);
        Ok(())
    }

    /// Runs initialization and the adaptive loop, without answering.
    pub fn explore(&self, q0: &str) -> std::result::Result<SessionState, SessionAbort> {
        let (note, hits) = self
            .initialize_note(q0)
            .map_err(|error| SessionAbort { error, state: None })?;
        let mut state = SessionState::new(q0, note, hits);
        while state.steps_executed < self.config.max_step && state.failures < self.config.max_failure {
            if let Err(error) = self.step(&mut state) {
                return Err(SessionAbort {
                    error,
                    state: Some(Box::new(state)),
                });
            }
        }
        Ok(state)
    }

    pub fn answer(&self, q0: &str, reference: &str) -> Result<String> {
        let prompt = self.prompts.answer(self.config.task_style, q0, reference)?;
        Ok(self.complete(prompt)?.trim().to_string())
    }

    /// The full pipeline: explore, then answer from the best note.
    pub fn run(&self, q0: &str) -> std::result::Result<AnswerResult, SessionAbort> {
        let state = self.explore(q0)?;
        self.finish(Mode::Deepnote, state)
    }

    /// Ablation: answer from the initial note, no adaptive steps.
    pub fn run_init_only(&self, q0: &str) -> std::result::Result<AnswerResult, SessionAbort> {
        let (note, hits) = self
            .initialize_note(q0)
            .map_err(|error| SessionAbort { error, state: None })?;
        self.finish(Mode::InitOnly, SessionState::new(q0, note, hits))
    }

    /// Baseline: one retrieval, answer directly from the passages.
    pub fn run_vanilla(&self, q0: &str) -> std::result::Result<AnswerResult, SessionAbort> {
        let abort = |error| SessionAbort { error, state: None };
        if q0.trim().is_empty() {
            return Err(abort(Error::Precondition("question must be non-empty".into())));
        }
        let hits = self.retriever.search(q0, self.config.top_k).map_err(abort)?;
        let reference = format_refs(self.passages_for(&hits));
        let answer = self.answer(q0, &reference).map_err(abort)?;
        Ok(AnswerResult {
            mode: Mode::Vanilla,
            answer,
            reference,
            initial_note: None,
            final_best_note: None,
            init_retrieved: hits,
            traces: Vec::new(),
            steps_executed: 0,
            failures: 0,
            retrieval_count_adaptive: 0,
            retrieval_count_total: 1,
        })
    }

    pub fn run_mode(&self, mode: Mode, q0: &str) -> std::result::Result<AnswerResult, SessionAbort> {
        match mode {
            Mode::Deepnote => self.run(q0),
            Mode::InitOnly => self.run_init_only(q0),
            Mode::Vanilla => self.run_vanilla(q0),
        }
    }

    fn finish(&self, mode: Mode, state: SessionState) -> std::result::Result<AnswerResult, SessionAbort> {
        let answer = match self.answer(&state.q0, &state.best_note.text) {
            Ok(a) => a,
            Err(error) => {
                return Err(SessionAbort {
                    error,
                    state: Some(Box::new(state)),
                })
            }
        };
        let adaptive = state.adaptive_retrievals();
        Ok(AnswerResult {
            mode,
            answer,
            reference: state.best_note.text.clone(),
            initial_note: Some(state.initial_note),
            final_best_note: Some(state.best_note),
            init_retrieved: state.init_retrieved,
            traces: state.traces,
            steps_executed: state.steps_executed,
            failures: state.failures,
            retrieval_count_adaptive: adaptive,
            retrieval_count_total: adaptive + 1,
        })
    }
}

#[cfg(test)]
mod tests;
