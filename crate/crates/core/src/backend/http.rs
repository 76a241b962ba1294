//! OpenAI-compatible `/chat/completions` client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, ChatMessage, CompletionResult, Usage, UsageSource};
use crate::error::BackendError;
use crate::registry::{AgentSpec, Endpoint};

/// Environment variable holding the bearer token sent to HTTP endpoints.
pub const API_KEY_ENV: &str = "AGENT_GRAPH_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let secs = self.initial_backoff.as_secs_f64() * self.multiplier.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ProviderUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ProviderUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    retry: RetryPolicy,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn new(api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            api_key,
            retry,
        })
    }

    /// Token from [`API_KEY_ENV`], default retry policy, 120 s timeout.
    pub fn from_env() -> Result<Self, BackendError> {
        Self::new(
            std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            RetryPolicy::default(),
            Duration::from_secs(120),
        )
    }

    fn attempt(&self, url: &str, body: &ChatRequest<'_>) -> Result<(String, Option<ProviderUsage>), Attempt> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no choices[0].message.content".into()))?;
        Ok((content, parsed.usage))
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        let Endpoint::Http(base) = &agent.endpoint else {
            return Err(BackendError::Unroutable(agent.endpoint.render()));
        };
        let url = format!("{base}/chat/completions");
        let body = ChatRequest {
            model: &agent.card.model_id,
            messages,
            temperature: agent.params.temperature,
            max_tokens: agent.params.max_tokens,
        };
        let mut retry = 0;
        loop {
            let started = Instant::now();
            match self.attempt(&url, &body) {
                Ok((text, usage)) => {
                    let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
                    let usage = match usage {
                        Some(ProviderUsage {
                            prompt_tokens: Some(p),
                            completion_tokens: Some(c),
                        }) => Usage {
                            prompt_tokens: p,
                            completion_tokens: c,
                            usage_source: UsageSource::Provider,
                        },
                        _ => Usage::heuristic(messages, &text),
                    };
                    return Ok(CompletionResult {
                        text,
                        usage,
                        latency_ms,
                    });
                }
                Err(Attempt::Fatal(msg)) => return Err(BackendError::Transport(msg)),
                Err(Attempt::Retryable(msg)) => {
                    if retry >= self.retry.max_retries {
                        return Err(BackendError::Transport(format!(
                            "{msg} (after {} retries)",
                            self.retry.max_retries
                        )));
                    }
                    log::debug!("{url}: {msg}; retrying");
                    std::thread::sleep(self.retry.backoff(retry));
                    retry += 1;
                }
            }
        }
    }
}
