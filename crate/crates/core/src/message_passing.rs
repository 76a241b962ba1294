//! Two-phase refinement over a ranked communication graph, plus the
//! all-to-all layer exchange used on complete graphs.
//!
//! Phase one (source to target) updates every node except the top-ranked one
//! from the *initial* responses of all better-ranked nodes. Phase two (target
//! to source) updates every node except the bottom-ranked one from the
//! *phase-one* responses of all worse-ranked nodes. Within a phase, node
//! updates only read the previous phase, so they run concurrently.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{CallKey, ChatMessage, Session, Stage};
use crate::edge_sampling::node_label;
use crate::error::PipelineError;
use crate::exec;
use crate::graph::{weight_to_label, CommGraph, RelevanceLabel};
use crate::query::{json_answer_instruction, Query};
use crate::registry::AgentSpec;
use crate::response::{Phase, ResponseRecord};

/// Responses keyed by node id.
pub type Responses = BTreeMap<usize, ResponseRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassConfig {
    pub enable_s2t: bool,
    pub enable_t2s: bool,
    /// Invert the rank order before both phases.
    pub reverse_direction: bool,
    /// Treat every edge weight as 1 (every peer labelled high relevance).
    pub uniform_weights: bool,
}

impl Default for PassConfig {
    fn default() -> Self {
        Self {
            enable_s2t: true,
            enable_t2s: true,
            reverse_direction: false,
            uniform_weights: false,
        }
    }
}

/// A peer response as it appears in a refinement prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerMessage {
    pub node_id: usize,
    pub label: RelevanceLabel,
    pub text: String,
}

fn render_peers(peers: &[PeerMessage]) -> String {
    peers
        .iter()
        .map(|p| format!("{} ({}): {}", node_label(p.node_id), p.label, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_s2t_prompt(query: &Query, own: &str, peers: &[PeerMessage]) -> Vec<ChatMessage> {
    vec![ChatMessage::user(format!(
        "Refine your answer by considering other models' responses.\n\
         \n\
         Question: {question}\n\
         \n\
         Your initial response: {own}\n\
         \n\
         Other models' responses (ranked by relevance):\n\
         \n\
         {peers}\n\
         \n\
         Integrate useful insights from these responses to improve your answer. \
         Be critical — some information may be incorrect.\n\
         \n\
         {instruction}",
        question = query.question,
        peers = render_peers(peers),
        instruction = json_answer_instruction(&query.answer_format_hint),
    ))]
}

pub fn build_t2s_prompt(query: &Query, own: &str, peers: &[PeerMessage]) -> Vec<ChatMessage> {
    vec![ChatMessage::user(format!(
        "Other models refined their answers after seeing yours. Use their improvements to finalize your response.\n\
         \n\
         Question: {question}\n\
         \n\
         Your initial response: {own}\n\
         \n\
         Updated responses from other models:\n\
         \n\
         {peers}\n\
         \n\
         Write your final response, incorporating valuable refinements. \
         Be critical — some information may be incorrect.\n\
         \n\
         {instruction}",
        question = query.question,
        peers = render_peers(peers),
        instruction = json_answer_instruction(&query.answer_format_hint),
    ))]
}

/// All-to-all layer prompt: every previous-layer response, unlabelled, then
/// the query itself when `include_query` is set.
pub fn build_layer_prompt(query: &Query, previous: &[(usize, String)], include_query: bool) -> Vec<ChatMessage> {
    let responses = previous
        .iter()
        .map(|(node, text)| format!("{}: {text}", node_label(*node)))
        .collect::<Vec<_>>()
        .join("\n\n");
    let question = if include_query {
        format!("Question: {}\n\n", query.question)
    } else {
        String::new()
    };
    vec![ChatMessage::user(format!(
        "Responses from the previous round:\n\
         \n\
         {responses}\n\
         \n\
         {question}{instruction}",
        instruction = json_answer_instruction(&query.answer_format_hint),
    ))]
}

fn label_for(weight: f64, cfg: &PassConfig) -> RelevanceLabel {
    if cfg.uniform_weights {
        RelevanceLabel::High
    } else {
        weight_to_label(weight)
    }
}

/// Phase-one peers of `target`: initial responses of all better-ranked nodes.
pub fn s2t_peers(graph: &CommGraph, target: usize, initial: &Responses, cfg: &PassConfig) -> Vec<PeerMessage> {
    graph
        .in_edges(target)
        .into_iter()
        .map(|e| PeerMessage {
            node_id: e.source,
            label: label_for(e.weight, cfg),
            text: initial[&e.source].message_text(),
        })
        .collect()
}

/// Phase-two peers of `source`: phase-one responses of all worse-ranked nodes.
pub fn t2s_peers(graph: &CommGraph, source: usize, r_prime: &Responses, cfg: &PassConfig) -> Vec<PeerMessage> {
    graph
        .feedback_weights(source)
        .into_iter()
        .map(|(node, w)| PeerMessage {
            node_id: node,
            label: label_for(w, cfg),
            text: r_prime[&node].message_text(),
        })
        .collect()
}

fn surviving(graph: &CommGraph, responses: &Responses) -> Responses {
    graph
        .order
        .iter()
        .map(|n| (*n, responses[n].clone()))
        .collect()
}

/// Phase one. Returns R′ for every surviving node.
pub fn source_to_target(
    session: &Session<'_>,
    graph: &CommGraph,
    initial: &Responses,
    query: &Query,
    agents: &BTreeMap<usize, &AgentSpec>,
    cfg: &PassConfig,
    parallel: bool,
) -> Result<Responses, PipelineError> {
    let mut out = surviving(graph, initial);
    if !cfg.enable_s2t || graph.len() < 2 {
        return Ok(out);
    }
    let targets = &graph.order[1..];
    let updated = exec::map(targets, parallel, |&node| -> Result<ResponseRecord, PipelineError> {
        let peers = s2t_peers(graph, node, initial, cfg);
        let prompt = build_s2t_prompt(query, &initial[&node].message_text(), &peers);
        let agent = agents[&node];
        let res = session.call(CallKey::new(Stage::SourceToTarget, node), agent, prompt)?;
        Ok(ResponseRecord::from_completion(node, &agent.agent_id, Phase::SourceToTarget, res.text))
    });
    for record in updated {
        let record = record?;
        out.insert(record.node_id, record);
    }
    Ok(out)
}

/// Phase two. Returns R″ for every surviving node.
#[allow(clippy::too_many_arguments)]
pub fn target_to_source(
    session: &Session<'_>,
    graph: &CommGraph,
    r_prime: &Responses,
    initial: &Responses,
    query: &Query,
    agents: &BTreeMap<usize, &AgentSpec>,
    cfg: &PassConfig,
    parallel: bool,
) -> Result<Responses, PipelineError> {
    let mut out = surviving(graph, r_prime);
    if !cfg.enable_t2s || graph.len() < 2 {
        return Ok(out);
    }
    let sources = &graph.order[..graph.len() - 1];
    let updated = exec::map(sources, parallel, |&node| -> Result<ResponseRecord, PipelineError> {
        let peers = t2s_peers(graph, node, r_prime, cfg);
        let prompt = build_t2s_prompt(query, &initial[&node].message_text(), &peers);
        let agent = agents[&node];
        let res = session.call(CallKey::new(Stage::TargetToSource, node), agent, prompt)?;
        Ok(ResponseRecord::from_completion(node, &agent.agent_id, Phase::TargetToSource, res.text))
    });
    for record in updated {
        let record = record?;
        out.insert(record.node_id, record);
    }
    Ok(out)
}

/// One all-to-all round on a complete graph: each node reads the previous
/// round's response of every in-neighbour (itself included).
#[allow(clippy::too_many_arguments)]
pub fn exchange_layer(
    session: &Session<'_>,
    graph: &CommGraph,
    previous: &Responses,
    query: &Query,
    agents: &BTreeMap<usize, &AgentSpec>,
    layer: u32,
    include_query: bool,
    parallel: bool,
) -> Result<Responses, PipelineError> {
    let updated = exec::map(&graph.order, parallel, |&node| -> Result<ResponseRecord, PipelineError> {
        let inputs: Vec<(usize, String)> = graph
            .in_edges(node)
            .into_iter()
            .map(|e| (e.source, previous[&e.source].message_text()))
            .collect();
        let prompt = build_layer_prompt(query, &inputs, include_query);
        let agent = agents[&node];
        let res = session.call(CallKey::new(Stage::Layer, node).layer(layer), agent, prompt)?;
        Ok(ResponseRecord::from_completion(node, &agent.agent_id, Phase::Layer, res.text))
    });
    updated
        .into_iter()
        .map(|r| r.map(|r| (r.node_id, r)))
        .collect()
}
