use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, GenerationBackend, LlmError, RateLimiter, TransientKind};

pub const DEFAULT_API_KEY_ENV: &str = "DEEPNOTE_API_KEY";

/// A server-sent `Retry-After` is honored up to this long, independently of
/// the backoff ceiling.
const RETRY_AFTER_CAP: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Scheme, host and optional port; `/v1/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    /// Takes precedence over `api_key_env` when set.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_ms: u64,
    pub requests_per_minute: Option<u32>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            api_key: None,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            timeout_ms: 60_000,
            requests_per_minute: None,
        }
    }
}

impl HttpConfig {
    pub(crate) fn resolve_key(&self) -> Result<String, LlmError> {
        if let Some(k) = &self.api_key {
            return Ok(k.clone());
        }
        std::env::var(&self.api_key_env)
            .map_err(|_| LlmError::Config(format!("credential variable `{}` is not set", self.api_key_env)))
    }

    pub(crate) fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }

    pub(crate) fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base: Duration::from_millis(self.backoff_base_ms),
            max: Duration::from_millis(self.backoff_max_ms),
        }
    }

    pub(crate) fn client(&self) -> Result<Client, LlmError> {
        Client::builder()
            .timeout(Duration::from_millis(self.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub max: Duration,
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.max)
    }
}

struct Transient {
    kind: TransientKind,
    status: Option<u16>,
    message: String,
    retry_after: Option<Duration>,
}

/// POSTs `body` as JSON, retrying transient failures (timeouts, connection
/// errors, 408, 429, 5xx) with exponential backoff.
pub(crate) fn post_json(
    client: &Client,
    url: &str,
    api_key: &str,
    body: &Value,
    policy: RetryPolicy,
    limiter: Option<&RateLimiter>,
) -> Result<Value, LlmError> {
    let mut attempt = 0u32;
    loop {
        if let Some(l) = limiter {
            l.acquire();
        }
        attempt += 1;
        let failure = match client.post(url).bearer_auth(api_key).json(body).send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let text = resp.text().map_err(|e| LlmError::Protocol {
                        status: Some(status.as_u16()),
                        message: format!("reading body: {e}"),
                    })?;
                    return serde_json::from_str(&text).map_err(|e| LlmError::Protocol {
                        status: Some(status.as_u16()),
                        message: format!("response is not JSON: {e}"),
                    });
                }
                let retry_after = resp
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                let message = resp.text().unwrap_or_default();
                match classify_status(status) {
                    Some(kind) => Transient {
                        kind,
                        status: Some(status.as_u16()),
                        message,
                        retry_after,
                    },
                    None => {
                        return Err(LlmError::Protocol {
                            status: Some(status.as_u16()),
                            message,
                        })
                    }
                }
            }
            Err(e) => Transient {
                kind: if e.is_timeout() {
                    TransientKind::Timeout
                } else {
                    TransientKind::Connection
                },
                status: None,
                message: e.to_string(),
                retry_after: None,
            },
        };
        if attempt > policy.max_retries {
            return Err(LlmError::Transport {
                kind: failure.kind,
                last_status: failure.status,
                attempts: attempt,
                message: failure.message,
            });
        }
        let wait = failure
            .retry_after
            .map_or_else(|| policy.delay(attempt - 1), |d| d.min(RETRY_AFTER_CAP));
        log::debug!("transient {:?} from {url}, retry {attempt} in {wait:?}", failure.kind);
        std::thread::sleep(wait);
    }
}

fn classify_status(status: StatusCode) -> Option<TransientKind> {
    match status.as_u16() {
        429 => Some(TransientKind::RateLimited),
        408 => Some(TransientKind::Timeout),
        500..=599 => Some(TransientKind::ServerError),
        _ => None,
    }
}

/// Chat-completion client for any server exposing `POST /v1/chat/completions`.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: Client,
    limiter: Option<RateLimiter>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let api_key = config.resolve_key()?;
        let client = config.client()?;
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(HttpBackend {
            config,
            api_key,
            client,
            limiter,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl GenerationBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if request.user_prompt.is_empty() {
            return Err(LlmError::Config("empty user prompt".into()));
        }
        request.sampling.validate()?;
        let model = if request.model.is_empty() {
            &self.config.model
        } else {
            &request.model
        };
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": request.user_prompt}],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_tokens,
        });
        let value = post_json(
            &self.client,
            &self.config.endpoint("/v1/chat/completions"),
            &self.api_key,
            &body,
            self.config.retry_policy(),
            self.limiter.as_ref(),
        )?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| LlmError::Protocol {
                status: Some(200),
                message: "response has no choices[0].message.content".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            base: Duration::from_millis(100),
            max: Duration::from_millis(500),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(3), Duration::from_millis(500));
        assert_eq!(p.delay(40), Duration::from_millis(500));
    }

    #[test]
    fn status_classification() {
        assert_eq!(
            classify_status(StatusCode::TOO_MANY_REQUESTS),
            Some(TransientKind::RateLimited)
        );
        assert_eq!(
            classify_status(StatusCode::BAD_GATEWAY),
            Some(TransientKind::ServerError)
        );
        assert_eq!(classify_status(StatusCode::BAD_REQUEST), None);
        assert_eq!(classify_status(StatusCode::UNAUTHORIZED), None);
    }

    #[test]
    fn missing_credential_is_config_error() {
        let cfg = HttpConfig {
            api_key_env: "DEEPNOTE_TEST_SURELY_UNSET_VAR".into(),
            ..Default::default()
        };
        assert!(matches!(HttpBackend::new(cfg), Err(LlmError::Config(_))));
    }

    #[test]
    fn endpoint_joins_without_double_slash() {
        let cfg = HttpConfig {
            base_url: "http://localhost:9/".into(),
            ..Default::default()
        };
        assert_eq!(
            cfg.endpoint("/v1/chat/completions"),
            "http://localhost:9/v1/chat/completions"
        );
    }
}
