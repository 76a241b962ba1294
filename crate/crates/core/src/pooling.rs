//! Graph pooling and final-answer extraction.

use std::sync::OnceLock;

use regex::Regex;

use crate::backend::{CallKey, ChatMessage, Session, Stage};
use crate::edge_sampling::node_label;
use crate::error::PipelineError;
use crate::graph::{weight_to_label, CommGraph};
use crate::message_passing::Responses;
use crate::query::{json_answer_instruction, Query, TaskKind};
use crate::registry::AgentSpec;
use crate::response::{Phase, ResponseRecord};

/// Refined response of the node with the most outgoing edges (the top-ranked
/// node). No backend call.
pub fn max_pool(graph: &CommGraph, r_final: &Responses) -> ResponseRecord {
    let node = graph.dominant_source().expect("graph has at least one node");
    r_final[&node].clone()
}

/// A response as listed in the pooling prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub node_id: usize,
    /// Relevance share, when weights are in use.
    pub share: Option<f64>,
    pub text: String,
}

/// Responses in rank order, annotated with their relevance shares unless
/// `annotate` is false.
pub fn pool_entries(graph: &CommGraph, r_final: &Responses, annotate: bool) -> Vec<PoolEntry> {
    graph
        .order
        .iter()
        .zip(graph.relevance_shares())
        .map(|(&node, share)| PoolEntry {
            node_id: node,
            share: annotate.then_some(share),
            text: r_final[&node].message_text(),
        })
        .collect()
}

pub fn build_pooling_prompt(query: &Query, entries: &[PoolEntry]) -> Vec<ChatMessage> {
    let responses = entries
        .iter()
        .map(|e| match e.share {
            Some(share) => format!(
                "{} (relevance share: {share:.2}, {}): {}",
                node_label(e.node_id),
                weight_to_label(share),
                e.text
            ),
            None => format!("{}: {}", node_label(e.node_id), e.text),
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    vec![ChatMessage::user(format!(
        "Synthesize these model responses into one final answer.\n\
         \n\
         Question: {question}\n\
         \n\
         Model responses:\n\
         {responses}\n\
         \n\
         Produce an accurate, coherent answer integrating the best insights. \
         Be critical — some information may be incorrect.\n\
         \n\
         {instruction}",
        question = query.question,
        instruction = json_answer_instruction(&query.answer_format_hint),
    ))]
}

/// Meta-agent synthesis over all refined responses. A singleton graph returns
/// its only response without a call; an unparseable synthesis (after
/// `retries`) degrades to [`max_pool`] with a warning.
#[allow(clippy::too_many_arguments)]
pub fn mean_pool(
    session: &Session<'_>,
    graph: &CommGraph,
    r_final: &Responses,
    query: &Query,
    meta: &AgentSpec,
    annotate: bool,
    retries: u32,
) -> Result<ResponseRecord, PipelineError> {
    if graph.len() == 1 {
        return Ok(max_pool(graph, r_final));
    }
    let prompt = build_pooling_prompt(query, &pool_entries(graph, r_final, annotate));
    for attempt in 0..=retries {
        let out = session.call(CallKey::new(Stage::Pooling, 0).attempt(attempt), meta, prompt.clone())?;
        let record = ResponseRecord::from_completion(0, &meta.agent_id, Phase::Pooled, out.text);
        if record.parsed {
            return Ok(record);
        }
        session.warn(Stage::Pooling, None, format!("synthesis not parseable (attempt {attempt})"));
    }
    session.warn(Stage::Pooling, None, "falling back to max pooling");
    Ok(max_pool(graph, r_final))
}

fn answer_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*(?:is)?\s*[:：]\s*([^\n]+)").unwrap())
}

fn choice_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-J])\)|\b([A-J])(?:[.):]|$)|^\s*([A-J])\s*$").unwrap())
}

fn fenced_block() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)```").unwrap())
}

/// Contents of the last `\boxed{...}` in `text`, braces balanced.
pub fn last_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// First capital choice letter in `text` that stands alone, e.g. `B`, `(B)`,
/// `B.` or `B)`.
pub fn choice_in(text: &str) -> Option<String> {
    choice_letter()
        .captures(text)
        .and_then(|c| c.iter().skip(1).flatten().next())
        .map(|m| m.as_str().to_string())
}

/// JSON answer field, then the first `Answer:` line, then a task-specific
/// pattern over the raw text.
pub fn extract_final_answer(record: &ResponseRecord, kind: TaskKind) -> Option<String> {
    if record.parsed && !record.answer.trim().is_empty() {
        return Some(record.answer.trim().to_string());
    }
    let raw = &record.raw_text;
    if let Some(c) = answer_line().captures(raw) {
        let found = c[1].trim().to_string();
        if !found.is_empty() {
            return Some(found);
        }
    }
    match kind {
        TaskKind::MultipleChoice => choice_in(raw),
        TaskKind::Math => last_boxed(raw).or_else(|| {
            static NUM: OnceLock<Regex> = OnceLock::new();
            let re = NUM.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?(?:/\d+)?").unwrap());
            re.find_iter(raw).last().map(|m| m.as_str().to_string())
        }),
        TaskKind::Code => fenced_block()
            .captures(raw)
            .map(|c| c[1].trim_end().to_string()),
        TaskKind::FreeForm => raw
            .lines()
            .map(str::trim).rfind(|l| !l.is_empty())
            .map(str::to_string),
    }
}
