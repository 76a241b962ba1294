//! Meta-agent selection of the top-k agents for a query.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{CallKey, ChatMessage, Session, Stage};
use crate::error::{PipelineError, PromptError};
use crate::query::Query;
use crate::registry::{format_model_descriptions, Registry};

/// A selected agent instance. Repeated agents get distinct node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInstance {
    pub node_id: usize,
    pub agent_index: usize,
    pub agent_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub k: usize,
    pub node_instances: Vec<NodeInstance>,
    /// True when the meta agent's reply never parsed and the first k agents
    /// were used instead.
    pub fell_back: bool,
}

impl Selection {
    pub fn from_indices(registry: &Registry, indices: &[usize]) -> Self {
        Self {
            k: indices.len(),
            node_instances: indices
                .iter()
                .enumerate()
                .map(|(node_id, &agent_index)| NodeInstance {
                    node_id,
                    agent_index,
                    agent_id: registry.agents()[agent_index].agent_id.clone(),
                })
                .collect(),
            fell_back: false,
        }
    }

    pub fn agent_indices(&self) -> Vec<usize> {
        self.node_instances.iter().map(|n| n.agent_index).collect()
    }
}

/// Evenly spread example indices, e.g. `0, 2, 5` for k=3 over `[0, 5]`.
fn example_indices(k: usize, max_index: usize) -> String {
    (0..k)
        .map(|i| if k == 1 { 0 } else { i * max_index / (k - 1) })
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_node_sampling_prompt(
    query: &Query,
    registry: &Registry,
    k: usize,
) -> Result<Vec<ChatMessage>, PromptError> {
    let n = registry.len();
    if k == 0 || k > n {
        return Err(PromptError::KOutOfRange { k, n });
    }
    let max_index = registry.max_index();
    Ok(vec![ChatMessage::user(format!(
        "Select {k} models best suited for this question.\n\
         \n\
         Question: {question}\n\
         \n\
         Available models:\n\
         {descriptions}\n\
         \n\
         Selection criteria (in priority order):\n\
         1. Domain match — prefer models trained in the question's domain\n\
         2. Task specialization — prefer models fine-tuned for the required skill\n\
         3. Include at least one generalist model if applicable\n\
         4. Prefer larger models only when the size gap is significant\n\
         \n\
         Rules:\n\
         - Output exactly {k} comma-separated indices from [0, {max_index}]\n\
         - You may repeat an index if the model is highly relevant\n\
         - No explanations\n\
         \n\
         Example: {example}\n\
         \n\
         Answer:",
        question = query.question,
        descriptions = format_model_descriptions(registry),
        example = example_indices(k, max_index),
    ))])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ParseError: {text:?}")]
pub struct SelectionParseError {
    pub text: String,
}

/// First `k` integers in `text`, each within `[0, max_index]`. Repeats are kept.
pub fn parse_selection(text: &str, k: usize, max_index: usize) -> Result<Vec<usize>, SelectionParseError> {
    static INT: OnceLock<Regex> = OnceLock::new();
    let re = INT.get_or_init(|| Regex::new(r"-?\d+").unwrap());
    let err = || SelectionParseError {
        text: text.to_string(),
    };
    let picked: Vec<&str> = re.find_iter(text).take(k).map(|m| m.as_str()).collect();
    if picked.len() < k {
        return Err(err());
    }
    picked
        .into_iter()
        .map(|s| s.parse::<usize>().ok().filter(|&i| i <= max_index).ok_or_else(err))
        .collect()
}

/// One meta-agent call (plus one retry on a bad reply). With `bypass`, all
/// `N` agents are taken without a call; that requires `k == N`.
pub fn sample_nodes(
    session: &Session<'_>,
    query: &Query,
    registry: &Registry,
    k: usize,
    bypass: bool,
    parse_retries: u32,
) -> Result<Selection, PipelineError> {
    if bypass {
        if k != registry.len() {
            return Err(PipelineError::Config(format!(
                "selection bypass needs top_k == {} (got {k})",
                registry.len()
            )));
        }
        return Ok(Selection::from_indices(registry, &(0..k).collect::<Vec<_>>()));
    }
    let messages = build_node_sampling_prompt(query, registry, k)?;
    let meta = registry.meta_agent();
    for attempt in 0..=parse_retries {
        let out = session.call(
            CallKey::new(Stage::NodeSampling, 0).attempt(attempt),
            meta,
            messages.clone(),
        )?;
        match parse_selection(&out.text, k, registry.max_index()) {
            Ok(indices) => return Ok(Selection::from_indices(registry, &indices)),
            Err(e) => session.warn(Stage::NodeSampling, None, format!("{e} (attempt {attempt})")),
        }
    }
    session.warn(
        Stage::NodeSampling,
        None,
        format!("selection unparseable; using agents 0..{}", k - 1),
    );
    let mut selection = Selection::from_indices(registry, &(0..k).collect::<Vec<_>>());
    selection.fell_back = true;
    Ok(selection)
}
