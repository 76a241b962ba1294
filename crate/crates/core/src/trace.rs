//! Run traces: the full record of one pipeline execution, serialized as
//! canonical JSON (sorted keys) so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{CallRecord, UsageSource, Warning};
use crate::error::TraceError;
use crate::graph::{weight_to_label, CommGraph, RelevanceVector, ScoreMatrix};
use crate::node_sampling::Selection;
use crate::pipeline::RunConfig;
use crate::query::Query;
use crate::response::ResponseRecord;

/// Keys holding wall-clock measurements.
pub const TIMING_KEYS: [&str; 2] = ["wall_ms", "latency_ms"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub calls: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_ms: f64,
    /// Calls whose token counts came from the provider.
    pub provider_usage_calls: usize,
    /// Calls whose token counts were estimated from text length.
    pub heuristic_usage_calls: usize,
}

impl Metrics {
    pub fn tokens(&self) -> u64 {
        self.tokens_in + self.tokens_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub query: Query,
    pub agents: Vec<String>,
    pub meta_agent: String,
    pub selection: Option<Selection>,
    pub initial: Vec<ResponseRecord>,
    pub score_matrix: Option<ScoreMatrix>,
    pub relevance: Option<RelevanceVector>,
    /// The graph messages were passed along (after any direction ablation).
    pub graph: Option<CommGraph>,
    pub source_to_target: Vec<ResponseRecord>,
    pub target_to_source: Vec<ResponseRecord>,
    /// All-to-all rounds; `layers[0]` holds the initial responses.
    pub layers: Vec<Vec<ResponseRecord>>,
    pub pooled: Option<ResponseRecord>,
    pub final_answer: Option<String>,
    pub calls: Vec<CallRecord>,
    pub warnings: Vec<Warning>,
    pub notes: Vec<String>,
    pub error: Option<String>,
    pub metrics: Metrics,
}

impl RunTrace {
    pub fn new(config: RunConfig, query: Query, agents: Vec<String>, meta_agent: String) -> Self {
        Self {
            config,
            query,
            agents,
            meta_agent,
            selection: None,
            initial: Vec::new(),
            score_matrix: None,
            relevance: None,
            graph: None,
            source_to_target: Vec::new(),
            target_to_source: Vec::new(),
            layers: Vec::new(),
            pooled: None,
            final_answer: None,
            calls: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
            error: None,
            metrics: Metrics::default(),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("trace serializes")
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&self.to_value())
    }

    /// Canonical JSON with every timing field removed.
    pub fn to_untimed_json(&self) -> String {
        let mut v = self.to_value();
        strip_keys(&mut v, &TIMING_KEYS);
        canonical_json(&v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_canonical_json())
    }

    /// Calls in `stage` order, for structural checks.
    pub fn calls_in(&self, stage: crate::backend::Stage) -> impl Iterator<Item = &CallRecord> {
        self.calls.iter().filter(move |c| c.key.stage == stage)
    }
}

/// Sums usage over the recorded calls; wall time is carried over from the run
/// clock.
pub fn compute_metrics(trace: &RunTrace) -> Metrics {
    let mut m = Metrics {
        calls: trace.calls.len(),
        wall_ms: trace.metrics.wall_ms,
        ..Metrics::default()
    };
    for c in &trace.calls {
        m.tokens_in += c.usage.prompt_tokens;
        m.tokens_out += c.usage.completion_tokens;
        match c.usage.usage_source {
            UsageSource::Provider => m.provider_usage_calls += 1,
            UsageSource::Heuristic => m.heuristic_usage_calls += 1,
        }
    }
    m
}

/// Pretty JSON with object keys sorted.
pub fn canonical_json(v: &Value) -> String {
    // serde_json's default map is ordered, so a round trip through Value sorts keys.
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

pub fn strip_keys(v: &mut Value, keys: &[&str]) {
    match v {
        Value::Object(map) => {
            for k in keys {
                map.remove(*k);
            }
            for child in map.values_mut() {
                strip_keys(child, keys);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|c| strip_keys(c, keys)),
        _ => {}
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<RunTrace, TraceError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TraceError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TraceError::Malformed(e.to_string()))
}

fn short(text: &str, max: usize) -> String {
    let one_line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if one_line.chars().count() <= max {
        one_line
    } else {
        format!("{}...", one_line.chars().take(max).collect::<String>())
    }
}

fn render_responses(out: &mut String, title: &str, records: &[ResponseRecord]) {
    if records.is_empty() {
        return;
    }
    let _ = writeln!(out, "{title}:");
    for r in records {
        let sub = if r.substituted { " [substituted]" } else { "" };
        let _ = writeln!(
            out,
            "  node{} ({}){sub}: answer={:?} | {}",
            r.node_id,
            r.agent_id,
            r.answer,
            short(&r.reasoning, 80)
        );
    }
}

/// Human-readable summary: selection, ranks, edges, phases and the answer.
pub fn render_summary(trace: &RunTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode: {:?}", trace.config.mode);
    let _ = writeln!(out, "question: {}", short(&trace.query.question, 100));
    if let Some(sel) = &trace.selection {
        let picks: Vec<String> = sel
            .node_instances
            .iter()
            .map(|n| format!("node{}={}", n.node_id, n.agent_id))
            .collect();
        let fb = if sel.fell_back { " (fallback)" } else { "" };
        let _ = writeln!(out, "selection{fb}: {}", picks.join(", "));
    }
    render_responses(&mut out, "initial", &trace.initial);
    if let Some(g) = &trace.graph {
        let ranks: Vec<String> = g
            .order
            .iter()
            .zip(&g.relevance)
            .map(|(n, s)| format!("node{n} S={s}"))
            .collect();
        let _ = writeln!(out, "ranks: {}", ranks.join(", "));
        if !g.pruned.is_empty() {
            let _ = writeln!(out, "pruned:");
            for p in &g.pruned {
                let _ = writeln!(out, "  node{} S={}", p.node_id, p.relevance);
            }
        }
        if !g.edges.is_empty() {
            let _ = writeln!(out, "edges:");
            for e in &g.edges {
                let _ = writeln!(
                    out,
                    "  node{} -> node{}  w={:.4} ({})",
                    e.source,
                    e.target,
                    e.weight,
                    weight_to_label(e.weight)
                );
            }
        }
    }
    render_responses(&mut out, "source-to-target", &trace.source_to_target);
    render_responses(&mut out, "target-to-source", &trace.target_to_source);
    for (i, layer) in trace.layers.iter().enumerate().skip(1) {
        render_responses(&mut out, &format!("layer {}", i + 1), layer);
    }
    if let Some(p) = &trace.pooled {
        let _ = writeln!(out, "pooled (node{}, {}): {}", p.node_id, p.agent_id, short(&p.raw_text, 120));
    }
    for w in &trace.warnings {
        let _ = writeln!(out, "warning [{:?} {:?}]: {}", w.stage, w.node, w.message);
    }
    if let Some(e) = &trace.error {
        let _ = writeln!(out, "error: {e}");
    }
    let m = &trace.metrics;
    let _ = writeln!(
        out,
        "answer: {}\ncalls={} tokens_in={} tokens_out={} wall_ms={:.1}",
        trace.final_answer.as_deref().unwrap_or("<none>"),
        m.calls,
        m.tokens_in,
        m.tokens_out,
        m.wall_ms
    );
    out
}
