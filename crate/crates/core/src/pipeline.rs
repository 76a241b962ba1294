//! End-to-end runs: the relevance graph pipeline, the all-to-all layered
//! baseline and a single-agent baseline, each producing a [`RunTrace`].

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{generate_structured, Backend, CallKey, FallbackPolicy, Generated, Session, Stage};
use crate::edge_sampling::{build_score_matrix, collect_initial_responses};
use crate::error::{PipelineError, PromptError};
use crate::exec;
use crate::graph::{prune, relevance_scores, CommGraph, RelevanceVector, TauScale, Topology};
use crate::message_passing::{
    build_layer_prompt, exchange_layer, source_to_target, target_to_source, PassConfig, Responses,
};
use crate::node_sampling::{sample_nodes, Selection};
use crate::pooling::{build_pooling_prompt, extract_final_answer, max_pool, mean_pool, PoolEntry};
use crate::query::{build_initial_prompt, Query};
use crate::registry::{AgentSpec, Registry};
use crate::response::{Phase, ResponseRecord};
use crate::trace::{compute_metrics, RunTrace};

const POOLING_NOTE: &str = "answer-format instruction appended to the pooling prompt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Selection, scoring, ranked message passing, pooling.
    #[default]
    Graph,
    /// Every agent, all-to-all layers, meta-agent aggregation.
    Moa,
    /// One agent answers alone.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub top_k: usize,
    pub tau: f64,
    pub tau_scale: TauScale,
    pub pooling: Pooling,
    pub pass: PassConfig,
    /// `complete` replaces scoring and the two ranked phases with one
    /// all-to-all round over unit weights.
    pub topology: Topology,
    /// Put the query itself into all-to-all round prompts.
    pub include_query: bool,
    /// Take every registry agent without asking the meta agent.
    pub bypass_selection: bool,
    pub moa_layers: u32,
    /// Agent for single mode; the meta agent when unset.
    pub agent: Option<String>,
    /// Overrides every agent's sampling temperature.
    pub temperature: Option<f64>,
    pub fallback: FallbackPolicy,
    pub selection_retries: u32,
    pub score_retries: u32,
    pub pool_retries: u32,
    /// Issue a stage's independent calls concurrently.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Graph,
            top_k: 3,
            tau: 0.05,
            tau_scale: TauScale::Raw,
            pooling: Pooling::Max,
            pass: PassConfig::default(),
            topology: Topology::Ranked,
            include_query: true,
            bypass_selection: false,
            moa_layers: 3,
            agent: None,
            temperature: None,
            fallback: FallbackPolicy::default(),
            selection_retries: 1,
            score_retries: 1,
            pool_retries: 1,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Graph-mode settings under which the pipeline coincides with a
    /// two-layer all-to-all run over all `n` agents.
    pub fn all_to_all(n: usize) -> Self {
        Self {
            top_k: n,
            tau: 0.0,
            pooling: Pooling::Mean,
            pass: PassConfig {
                uniform_weights: true,
                ..PassConfig::default()
            },
            topology: Topology::Complete,
            include_query: true,
            bypass_selection: true,
            ..Self::default()
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), PipelineError> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(PipelineError::Config(format!("tau must be finite and >= 0 (got {})", self.tau)));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(PipelineError::Config(format!("temperature must be >= 0 (got {t})")));
            }
        }
        match self.mode {
            Mode::Graph => {
                if self.top_k == 0 || self.top_k > registry.len() {
                    return Err(PromptError::KOutOfRange {
                        k: self.top_k,
                        n: registry.len(),
                    }
                    .into());
                }
            }
            Mode::Moa => {
                if self.moa_layers == 0 {
                    return Err(PipelineError::Config("moa_layers must be >= 1".into()));
                }
            }
            Mode::Single => {
                if let Some(id) = &self.agent {
                    registry.agent(id)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub answer: String,
    pub trace: RunTrace,
}

/// A run that stopped early. The trace holds everything up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: PipelineError,
    pub trace: Box<RunTrace>,
}

pub fn run(query: &Query, registry: &Registry, cfg: &RunConfig, backend: &dyn Backend) -> Result<RunOutcome, RunFailure> {
    match cfg.mode {
        Mode::Graph => run_goa(query, registry, cfg, backend),
        Mode::Moa => run_moa_reduction(query, registry, cfg, backend),
        Mode::Single => run_single(query, registry, cfg, backend),
    }
}

pub fn run_goa(query: &Query, registry: &Registry, cfg: &RunConfig, backend: &dyn Backend) -> Result<RunOutcome, RunFailure> {
    execute(query, registry, cfg, backend, graph_stages)
}

pub fn run_moa_reduction(
    query: &Query,
    registry: &Registry,
    cfg: &RunConfig,
    backend: &dyn Backend,
) -> Result<RunOutcome, RunFailure> {
    execute(query, registry, cfg, backend, moa_stages)
}

pub fn run_single(query: &Query, registry: &Registry, cfg: &RunConfig, backend: &dyn Backend) -> Result<RunOutcome, RunFailure> {
    execute(query, registry, cfg, backend, single_stages)
}

type Stages = fn(&Session<'_>, &Query, &Registry, &RunConfig, &mut RunTrace) -> Result<ResponseRecord, PipelineError>;

fn effective_registry<'r>(registry: &'r Registry, cfg: &RunConfig) -> Result<Cow<'r, Registry>, PipelineError> {
    let Some(t) = cfg.temperature else {
        return Ok(Cow::Borrowed(registry));
    };
    let agents = registry
        .agents()
        .iter()
        .cloned()
        .map(|mut a| {
            a.params.temperature = t;
            a
        })
        .collect();
    Ok(Cow::Owned(Registry::new(agents, Some(&registry.meta_agent().agent_id))?))
}

fn execute(
    query: &Query,
    registry: &Registry,
    cfg: &RunConfig,
    backend: &dyn Backend,
    stages: Stages,
) -> Result<RunOutcome, RunFailure> {
    let clock = Instant::now();
    let mut trace = RunTrace::new(
        cfg.clone(),
        query.clone(),
        registry.agents().iter().map(|a| a.agent_id.clone()).collect(),
        registry.meta_agent().agent_id.clone(),
    );
    let session = Session::new(backend);
    let result = cfg
        .validate(registry)
        .and_then(|()| effective_registry(registry, cfg))
        .and_then(|reg| stages(&session, query, &reg, cfg, &mut trace))
        .map(|pooled| {
            let answer = extract_final_answer(&pooled, query.task_kind);
            if answer.is_none() {
                session.warn(Stage::Pooling, None, "no answer could be extracted");
            }
            trace.pooled = Some(pooled);
            answer.unwrap_or_default()
        });
    let (calls, warnings) = session.finish();
    trace.calls = calls;
    trace.warnings = warnings;
    trace.metrics.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    trace.metrics = compute_metrics(&trace);
    match result {
        Ok(answer) => {
            trace.final_answer = Some(answer.clone());
            Ok(RunOutcome { answer, trace })
        }
        Err(error) => {
            trace.error = Some(error.to_string());
            Err(RunFailure {
                error,
                trace: Box::new(trace),
            })
        }
    }
}

/// Node id to the agent answering for it; substituted nodes keep the agent
/// that actually produced their response.
fn bind_agents<'r>(registry: &'r Registry, records: &[ResponseRecord]) -> Result<BTreeMap<usize, &'r AgentSpec>, PipelineError> {
    records
        .iter()
        .map(|r| Ok((r.node_id, registry.agent(&r.agent_id)?)))
        .collect()
}

fn by_node(records: &[ResponseRecord]) -> Responses {
    records.iter().map(|r| (r.node_id, r.clone())).collect()
}

fn in_phase(responses: &Responses, phase: Phase) -> Vec<ResponseRecord> {
    responses.values().filter(|r| r.phase == phase).cloned().collect()
}

fn graph_stages(
    session: &Session<'_>,
    query: &Query,
    registry: &Registry,
    cfg: &RunConfig,
    trace: &mut RunTrace,
) -> Result<ResponseRecord, PipelineError> {
    let par = cfg.parallel;
    let selection = sample_nodes(session, query, registry, cfg.top_k, cfg.bypass_selection, cfg.selection_retries)?;
    trace.selection = Some(selection.clone());
    let initial = collect_initial_responses(session, &selection, query, registry, &cfg.fallback, par)?;
    trace.initial = initial.clone();
    let agents = bind_agents(registry, &initial)?;
    let initial_by_node = by_node(&initial);

    let graph = match cfg.topology {
        Topology::Complete => {
            let nodes: Vec<usize> = initial.iter().map(|r| r.node_id).collect();
            CommGraph::complete(&nodes)
        }
        Topology::Ranked => {
            let relevance = if initial.len() == 1 {
                RelevanceVector { scores: vec![1.0] }
            } else {
                let scorers: Vec<&AgentSpec> = initial.iter().map(|r| agents[&r.node_id]).collect();
                let matrix = build_score_matrix(session, query, &scorers, &initial, cfg.score_retries, par)?;
                let v = relevance_scores(&matrix);
                trace.score_matrix = Some(matrix);
                v
            };
            trace.relevance = Some(relevance.clone());
            CommGraph::build(&prune(&relevance, cfg.tau, cfg.tau_scale), &relevance)
        }
    };
    let graph = if cfg.pass.reverse_direction {
        graph.reversed()
    } else {
        graph
    };
    trace.graph = Some(graph.clone());

    let r_final = match cfg.topology {
        Topology::Complete => {
            let out = exchange_layer(session, &graph, &initial_by_node, query, &agents, 1, cfg.include_query, par)?;
            trace.layers = vec![initial.clone(), out.values().cloned().collect()];
            out
        }
        Topology::Ranked => {
            let r1 = source_to_target(session, &graph, &initial_by_node, query, &agents, &cfg.pass, par)?;
            trace.source_to_target = in_phase(&r1, Phase::SourceToTarget);
            let r2 = target_to_source(session, &graph, &r1, &initial_by_node, query, &agents, &cfg.pass, par)?;
            trace.target_to_source = in_phase(&r2, Phase::TargetToSource);
            r2
        }
    };

    match cfg.pooling {
        Pooling::Max => Ok(max_pool(&graph, &r_final)),
        Pooling::Mean => {
            trace.notes.push(POOLING_NOTE.into());
            let annotate = cfg.topology == Topology::Ranked && !cfg.pass.uniform_weights;
            mean_pool(session, &graph, &r_final, query, registry.meta_agent(), annotate, cfg.pool_retries)
        }
    }
}

fn moa_stages(
    session: &Session<'_>,
    query: &Query,
    registry: &Registry,
    cfg: &RunConfig,
    trace: &mut RunTrace,
) -> Result<ResponseRecord, PipelineError> {
    let par = cfg.parallel;
    let selection = Selection::from_indices(registry, &(0..registry.len()).collect::<Vec<_>>());
    trace.selection = Some(selection.clone());
    let mut layer = collect_initial_responses(session, &selection, query, registry, &cfg.fallback, par)?;
    trace.initial = layer.clone();
    trace.layers.push(layer.clone());
    let agents: Vec<(usize, &AgentSpec)> = bind_agents(registry, &layer)?.into_iter().collect();

    for l in 1..cfg.moa_layers {
        let previous: Vec<(usize, String)> = layer.iter().map(|r| (r.node_id, r.message_text())).collect();
        let prompt = build_layer_prompt(query, &previous, cfg.include_query);
        layer = exec::map(&agents, par, |&(node, agent)| {
            session
                .call(CallKey::new(Stage::Layer, node).layer(l), agent, prompt.clone())
                .map(|res| ResponseRecord::from_completion(node, &agent.agent_id, Phase::Layer, res.text))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        trace.layers.push(layer.clone());
    }

    if layer.len() == 1 {
        return Ok(layer.remove(0));
    }
    trace.notes.push(POOLING_NOTE.into());
    let entries: Vec<PoolEntry> = layer
        .iter()
        .map(|r| PoolEntry {
            node_id: r.node_id,
            share: None,
            text: r.message_text(),
        })
        .collect();
    let prompt = build_pooling_prompt(query, &entries);
    let meta = registry.meta_agent();
    for attempt in 0..=cfg.pool_retries {
        let out = session.call(CallKey::new(Stage::Pooling, 0).attempt(attempt), meta, prompt.clone())?;
        let record = ResponseRecord::from_completion(0, &meta.agent_id, Phase::Pooled, out.text);
        if record.parsed {
            return Ok(record);
        }
        session.warn(Stage::Pooling, None, format!("synthesis not parseable (attempt {attempt})"));
    }
    session.warn(Stage::Pooling, None, "falling back to the first agent's last response");
    Ok(layer.remove(0))
}

fn single_stages(
    session: &Session<'_>,
    query: &Query,
    registry: &Registry,
    cfg: &RunConfig,
    trace: &mut RunTrace,
) -> Result<ResponseRecord, PipelineError> {
    let agent = match &cfg.agent {
        Some(id) => registry.agent(id)?,
        None => registry.meta_agent(),
    };
    let index = registry.index_of(&agent.agent_id).expect("agent comes from the registry");
    trace.selection = Some(Selection::from_indices(registry, &[index]));
    let prompt = build_initial_prompt(query);
    let record = match generate_structured(session, Stage::Initial, 0, agent, &prompt, Phase::Initial, &cfg.fallback, 0)? {
        Generated::Parsed(record) => record,
        Generated::Failed { last_text, .. } => ResponseRecord::unparsed(0, &agent.agent_id, Phase::Initial, last_text),
    };
    trace.initial = vec![record.clone()];
    Ok(record)
}
