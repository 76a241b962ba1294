//! Agent invocation layer.
//!
//! Every forward pass of an agent goes through a [`Backend`]. A pipeline run
//! wraps the backend in a [`Session`], which owns the run's call log. Calls are
//! keyed by [`CallKey`] so the log can be sorted into a deterministic order no
//! matter in which order concurrent completions land.

mod fallback;
mod http;
mod parse;
mod routing;
mod scripted;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::BackendError;
use crate::registry::AgentSpec;

pub use fallback::{apply_fallback, generate_structured, FallbackPolicy, Generated};
pub use http::{HttpBackend, RetryPolicy, API_KEY_ENV};
pub use parse::{parse_structured_response, StructuredFields};
pub use routing::RoutingBackend;
pub use scripted::{
    load_script, save_script, Invocation, RecordingBackend, ScriptEntry, ScriptMatch,
    ScriptedBackend, SimulatedLatency,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UsageSource {
    Provider,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usage_source: UsageSource,
}

impl Usage {
    /// `ceil(chars / 4)` per side.
    pub fn heuristic(messages: &[ChatMessage], completion: &str) -> Self {
        let prompt_chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
        Self {
            prompt_tokens: heuristic_tokens(prompt_chars),
            completion_tokens: heuristic_tokens(completion.chars().count()),
            usage_source: UsageSource::Heuristic,
        }
    }
}

pub fn heuristic_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: f64,
}

pub trait Backend: Send + Sync {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        (**self).complete(agent, messages)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        (**self).complete(agent, messages)
    }
}

/// SHA-256 (hex) of the concatenated message contents.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.content.as_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// Pipeline stage a call belongs to. The declaration order is the trace order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NodeSampling,
    Initial,
    Scoring,
    SourceToTarget,
    TargetToSource,
    Layer,
    Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallKey {
    pub stage: Stage,
    pub layer: u32,
    pub node: u32,
    pub attempt: u32,
}

impl CallKey {
    pub fn new(stage: Stage, node: usize) -> Self {
        Self {
            stage,
            layer: 0,
            node: node as u32,
            attempt: 0,
        }
    }

    pub fn attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn layer(mut self, layer: u32) -> Self {
        self.layer = layer;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub key: CallKey,
    pub agent_id: String,
    pub messages: Vec<ChatMessage>,
    pub completion: String,
    pub usage: Usage,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Warning {
    pub stage: Stage,
    pub node: Option<u32>,
    pub message: String,
}

/// Per-run view of a backend: records every successful call and every
/// degraded-path warning.
pub struct Session<'a> {
    backend: &'a dyn Backend,
    calls: Mutex<Vec<CallRecord>>,
    warnings: Mutex<Vec<Warning>>,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Self {
            backend,
            calls: Mutex::new(Vec::new()),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn call(
        &self,
        key: CallKey,
        agent: &AgentSpec,
        messages: Vec<ChatMessage>,
    ) -> Result<CompletionResult, BackendError> {
        let result = self.backend.complete(agent, &messages)?;
        self.calls.lock().expect("call log poisoned").push(CallRecord {
            key,
            agent_id: agent.agent_id.clone(),
            messages,
            completion: result.text.clone(),
            usage: result.usage,
            latency_ms: result.latency_ms,
        });
        Ok(result)
    }

    pub fn warn(&self, stage: Stage, node: Option<usize>, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{stage:?} node {node:?}: {message}");
        self.warnings.lock().expect("warning log poisoned").push(Warning {
            stage,
            node: node.map(|n| n as u32),
            message,
        });
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    /// Calls sorted by key, warnings sorted by (stage, node, message).
    pub fn finish(&self) -> (Vec<CallRecord>, Vec<Warning>) {
        let mut calls = self.calls.lock().expect("call log poisoned").clone();
        calls.sort_by_key(|c| c.key);
        let mut warnings = self.warnings.lock().expect("warning log poisoned").clone();
        warnings.sort();
        (calls, warnings)
    }
}
