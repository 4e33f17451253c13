//! Note-centric adaptive retrieval-augmented generation.
//!
//! The pipeline retrieves passages for a question, distills them into a
//! note, then iterates: refine queries from the best note so far, retrieve,
//! fold the new passages into a candidate note, and let the model judge
//! whether the candidate improves on the best note. The loop stops after
//! `max_step` iterations or `max_failure` rejected updates, and the final
//! answer is generated from the best note alone.
//!
//! Around that loop the crate provides a BM25 index and a brute-force dense
//! retriever, a chat-completion client plus a scripted test backend, QA
//! metrics with a batch harness, knowledge-density analysis, and a builder
//! for four-stage preference-pair datasets.

pub mod cli;
pub mod corpus;
pub mod dnalign;
pub mod engine;
mod error;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod retrieval;

pub use error::{Error, Result};
