//! Format retries and general-agent substitution for structured generations.

use serde::{Deserialize, Serialize};

use super::{parse_structured_response, CallKey, ChatMessage, Session, Stage};
use crate::error::{BackendError, PipelineError};
use crate::exec;
use crate::registry::{AgentSpec, Registry};
use crate::response::{Phase, ResponseRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FallbackPolicy {
    /// Re-generations allowed after a format failure, per agent.
    pub parse_retries: u32,
    /// Responses below this confidence count as format failures. 0 disables.
    pub confidence_floor: f64,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self {
            parse_retries: 2,
            confidence_floor: 0.0,
        }
    }
}

impl FallbackPolicy {
    fn accepts(&self, confidence: Option<f64>) -> bool {
        self.confidence_floor <= 0.0 || confidence.is_some_and(|c| c >= self.confidence_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Parsed(ResponseRecord),
    /// Every attempt failed the format; carries what is needed to re-ask.
    Failed {
        node_id: usize,
        agent_id: String,
        messages: Vec<ChatMessage>,
        last_text: String,
    },
}

/// Asks `agent` up to `1 + parse_retries` times until the reply parses.
/// Attempts are numbered from `first_attempt` in the call keys.
#[allow(clippy::too_many_arguments)]
pub fn generate_structured(
    session: &Session<'_>,
    stage: Stage,
    node_id: usize,
    agent: &AgentSpec,
    messages: &[ChatMessage],
    phase: Phase,
    policy: &FallbackPolicy,
    first_attempt: u32,
) -> Result<Generated, BackendError> {
    let mut last_text = String::new();
    for attempt in 0..=policy.parse_retries {
        let key = CallKey::new(stage, node_id).attempt(first_attempt + attempt);
        let out = session.call(key, agent, messages.to_vec())?;
        match parse_structured_response(&out.text) {
            Ok(fields) if policy.accepts(fields.confidence) => {
                return Ok(Generated::Parsed(ResponseRecord::from_fields(
                    node_id,
                    &agent.agent_id,
                    phase,
                    out.text,
                    fields,
                )));
            }
            Ok(_) => session.warn(
                stage,
                Some(node_id),
                format!("agent `{}` below confidence floor (attempt {attempt})", agent.agent_id),
            ),
            Err(_) => session.warn(
                stage,
                Some(node_id),
                format!("agent `{}` output not parseable (attempt {attempt})", agent.agent_id),
            ),
        }
        last_text = out.text;
    }
    Ok(Generated::Failed {
        node_id,
        agent_id: agent.agent_id.clone(),
        messages: messages.to_vec(),
        last_text,
    })
}

/// Replaces every failed generation with one from the registry's general
/// agent on the same prompt. Substituted records are flagged.
pub fn apply_fallback(
    session: &Session<'_>,
    outcomes: Vec<Generated>,
    registry: &Registry,
    stage: Stage,
    policy: &FallbackPolicy,
    parallel: bool,
) -> Result<Vec<ResponseRecord>, PipelineError> {
    let general = registry.meta_agent();
    let first_attempt = policy.parse_retries + 1;
    let resolved = exec::map(&outcomes, parallel, |outcome| -> Result<ResponseRecord, PipelineError> {
        match outcome {
            Generated::Parsed(record) => Ok(record.clone()),
            Generated::Failed {
                node_id,
                agent_id,
                messages,
                ..
            } => {
                session.warn(
                    stage,
                    Some(*node_id),
                    format!("replacing `{agent_id}` with general agent `{}`", general.agent_id),
                );
                let phase = match stage {
                    Stage::Layer => Phase::Layer,
                    _ => Phase::Initial,
                };
                match generate_structured(
                    session,
                    stage,
                    *node_id,
                    general,
                    messages,
                    phase,
                    policy,
                    first_attempt,
                )? {
                    Generated::Parsed(mut record) => {
                        record.substituted = true;
                        Ok(record)
                    }
                    Generated::Failed { .. } => Err(PipelineError::FallbackExhausted {
                        node_id: *node_id,
                        agent_id: general.agent_id.clone(),
                    }),
                }
            }
        }
    });
    resolved.into_iter().collect()
}
