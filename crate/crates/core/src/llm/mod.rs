//! Generation backends.
//!
//! [`GenerationBackend`] is the one contract every pipeline stage talks to.
//! [`HttpBackend`] speaks the common `/v1/chat/completions` protocol;
//! [`ScriptedBackend`] replays canned responses for deterministic tests.

mod http;
mod rate_limit;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use http::post_json;
pub use http::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
pub use rate_limit::RateLimiter;
pub use scripted::{ScriptEntry, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    /// Inference setting: temperature 0.1.
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.1,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

impl SamplingConfig {
    pub fn new(temperature: f64, top_p: f64) -> Self {
        SamplingConfig {
            temperature,
            top_p,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// The nine temperature × top_p settings used for preference-data
    /// generation, temperature-major.
    pub fn data_grid() -> Vec<SamplingConfig> {
        const VALUES: [f64; 3] = [0.1, 0.5, 0.9];
        VALUES
            .iter()
            .flat_map(|&t| VALUES.iter().map(move |&p| SamplingConfig::new(t, p)))
            .collect()
    }
}

/// A single-turn, user-role chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub user_prompt: String,
    pub sampling: SamplingConfig,
    /// Empty means "whatever the backend is configured with".
    pub model: String,
}

impl ChatRequest {
    pub fn new(user_prompt: impl Into<String>, sampling: SamplingConfig) -> Self {
        ChatRequest {
            user_prompt: user_prompt.into(),
            sampling,
            model: String::new(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransientKind {
    Timeout,
    RateLimited,
    ServerError,
    Connection,
}

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("backend configuration: {0}")]
    Config(String),

    /// A non-retryable rejection (4xx other than 429) or an unreadable reply.
    #[error("protocol error (status {status:?}): {message}")]
    Protocol { status: Option<u16>, message: String },

    /// Transient failures persisted through every retry.
    #[error("transport failed after {attempts} attempt(s) ({kind:?}, last status {last_status:?}): {message}")]
    Transport {
        kind: TransientKind,
        last_status: Option<u16>,
        attempts: u32,
        message: String,
    },

    #[error("unusable content: {0}")]
    Content(String),

    #[error("script exhausted: no canned response for prompt starting {0:?}")]
    ScriptExhausted(String),
}

pub trait GenerationBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sampling_matches_inference_setting() {
        let s = SamplingConfig::default();
        assert_eq!(s.temperature, 0.1);
        assert_eq!(s.max_tokens, 1024);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn data_grid_has_nine_distinct_settings() {
        let grid = SamplingConfig::data_grid();
        assert_eq!(grid.len(), 9);
        for t in [0.1, 0.5, 0.9] {
            for p in [0.1, 0.5, 0.9] {
                assert!(grid.iter().any(|s| s.temperature == t && s.top_p == p));
            }
        }
    }

    #[test]
    fn invalid_sampling_rejected() {
        assert!(SamplingConfig::new(-0.1, 0.5).validate().is_err());
        assert!(SamplingConfig::new(0.1, 0.0).validate().is_err());
        assert!(SamplingConfig::new(0.1, 1.1).validate().is_err());
    }
}
