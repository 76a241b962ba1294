use serde::{Deserialize, Serialize};

use crate::backend::StructuredFields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    SourceToTarget,
    TargetToSource,
    /// One round of all-to-all exchange (mixture-of-agents layers).
    Layer,
    Pooled,
}

/// One node's output for one pipeline phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub node_id: usize,
    pub agent_id: String,
    pub phase: Phase,
    pub reasoning: String,
    pub answer: String,
    pub confidence: Option<f64>,
    /// Unmodified completion text.
    pub raw_text: String,
    /// Whether structured fields were extracted from `raw_text`.
    pub parsed: bool,
    /// Set when the original agent failed the format and the general agent
    /// produced this record instead.
    pub substituted: bool,
}

impl ResponseRecord {
    pub fn from_fields(
        node_id: usize,
        agent_id: &str,
        phase: Phase,
        raw_text: String,
        fields: StructuredFields,
    ) -> Self {
        Self {
            node_id,
            agent_id: agent_id.to_string(),
            phase,
            reasoning: fields.reasoning,
            answer: fields.answer,
            confidence: fields.confidence,
            raw_text,
            parsed: true,
            substituted: false,
        }
    }

    pub fn unparsed(node_id: usize, agent_id: &str, phase: Phase, raw_text: String) -> Self {
        Self {
            node_id,
            agent_id: agent_id.to_string(),
            phase,
            reasoning: String::new(),
            answer: String::new(),
            confidence: None,
            raw_text,
            parsed: false,
            substituted: false,
        }
    }

    /// Parses `raw_text`; keeps the raw text alone when nothing is extractable.
    pub fn from_completion(node_id: usize, agent_id: &str, phase: Phase, raw_text: String) -> Self {
        match crate::backend::parse_structured_response(&raw_text) {
            Ok(fields) => Self::from_fields(node_id, agent_id, phase, raw_text, fields),
            Err(_) => Self::unparsed(node_id, agent_id, phase, raw_text),
        }
    }

    /// Text embedded into other agents' prompts: reasoning plus answer when
    /// parsed, the raw completion otherwise.
    pub fn message_text(&self) -> String {
        if !self.parsed {
            return self.raw_text.trim().to_string();
        }
        if self.reasoning.is_empty() {
            format!("Answer: {}", self.answer)
        } else {
            format!("{}\nAnswer: {}", self.reasoning, self.answer)
        }
    }
}
