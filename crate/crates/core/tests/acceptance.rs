//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;

use agent_graph::backend::{
    parse_structured_response, Backend, ChatMessage, CompletionResult, ScriptEntry, ScriptedBackend, Stage, Usage,
};
use agent_graph::bench::synthetic::{build_synthetic_suite, SyntheticItem, SyntheticSuite, AGENTS};
use agent_graph::bench::{run_benchmark, BenchOptions};
use agent_graph::edge_sampling::parse_scores;
use agent_graph::error::BackendError;
use agent_graph::graph::{prune, relevance_scores, CommGraph, ScoreMatrix, TauScale};
use agent_graph::node_sampling::parse_selection;
use agent_graph::pipeline::{run, run_goa, run_moa_reduction, Mode, Pooling, RunConfig};
use agent_graph::query::{Query, TaskKind};
use agent_graph::registry::{AgentSpec, Endpoint, GenerationParams, ModelCard, Registry};
use agent_graph::trace::RunTrace;

const TOL: f64 = 1e-9;
const SUITE_SEED: u64 = 2024;

fn suite() -> &'static SyntheticSuite {
    static SUITE: OnceLock<SyntheticSuite> = OnceLock::new();
    SUITE.get_or_init(|| build_synthetic_suite(SUITE_SEED).expect("suite builds"))
}

fn suite_backend() -> &'static ScriptedBackend {
    static BACKEND: OnceLock<ScriptedBackend> = OnceLock::new();
    BACKEND.get_or_init(|| suite().backend())
}

fn registry(ids: &[&str], meta: &str) -> Registry {
    let agents = ids
        .iter()
        .map(|id| AgentSpec {
            agent_id: id.to_string(),
            card: ModelCard {
                model_id: id.to_string(),
                domain: id.to_string(),
                task_specialization: format!("{id} tasks"),
                parameter_size: "7B".into(),
                special_features: String::new(),
            },
            endpoint: Endpoint::Scripted("script.json".into()),
            params: GenerationParams::default(),
        })
        .collect();
    Registry::new(agents, Some(meta)).unwrap()
}

fn stage_calls(trace: &RunTrace, stage: Stage) -> usize {
    trace.calls_in(stage).count()
}

// ---------------------------------------------------------------------------
// 1. call counts

fn criterion_call_counts() -> String {
    let suite = suite();
    let backend = suite_backend();
    let graph_max = RunConfig::default();
    let graph_mean = RunConfig {
        pooling: Pooling::Mean,
        ..RunConfig::default()
    };
    let moa = RunConfig {
        mode: Mode::Moa,
        moa_layers: 3,
        ..RunConfig::default()
    };
    assert_eq!((graph_max.top_k, graph_max.tau), (3, 0.05));
    assert_eq!(suite.registry.len(), 6);
    let mut seen = BTreeMap::new();
    for (name, cfg, want) in [("max", &graph_max, 11), ("mean", &graph_mean, 12), ("moa", &moa, 19)] {
        for item in &suite.items {
            backend.clear_log();
            let out = run(&item.query, &suite.registry, cfg, backend).unwrap();
            let t = &out.trace;
            if cfg.mode == Mode::Graph {
                let g = t.graph.as_ref().unwrap();
                assert!(g.pruned.is_empty(), "pruning triggered on {}", item.item_id);
                assert!(t.initial.iter().all(|r| !r.substituted), "fallback on {}", item.item_id);
            }
            assert_eq!(t.metrics.calls, want, "{name} on {}", item.item_id);
            assert_eq!(backend.invocation_count(), t.metrics.calls, "invocation log audit");
        }
        seen.insert(name, want);
    }
    format!(
        "graph max = {}, graph mean = {}, moa(6 agents, 3 layers) = {} on all {} items",
        seen["max"],
        seen["mean"],
        seen["moa"],
        suite.items.len()
    )
}

// ---------------------------------------------------------------------------
// 2. normalization invariants

fn random_peer_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut raw: Vec<f64> = (0..n - 1)
                .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..10.0) })
                .collect();
            if raw.iter().sum::<f64>() == 0.0 {
                raw[0] = 1.0;
            }
            let text = raw.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", ");
            parse_scores(&text, n - 1).expect("positive sum parses")
        })
        .collect()
}

fn criterion_normalization() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 1500;
    for case in 0..cases {
        let n = rng.gen_range(2..=8);
        let m = ScoreMatrix::from_peer_rows(&random_peer_rows(&mut rng, n)).unwrap();
        for (i, row) in m.entries().iter().enumerate() {
            assert_eq!(row[i], 0.0, "case {case}: diagonal");
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= TOL, "case {case}: row {i} sum");
        }
        let v = relevance_scores(&m);
        assert!((v.total() - n as f64).abs() <= TOL, "case {case}: relevance total");
        let tau = rng.gen_range(0.0..1.5);
        let g = CommGraph::build(&prune(&v, tau, TauScale::Raw), &v);
        for &t in &g.order[1..] {
            let sum: f64 = g.in_edges(t).iter().map(|e| e.weight).sum();
            assert!((sum - 1.0).abs() <= TOL, "case {case}: in-weights of node {t}");
        }
    }
    format!("{cases} random matrices (n in [2, 8]): rows, relevance totals and in-weights within {TOL:e}")
}

// ---------------------------------------------------------------------------
// 3. pruning monotonicity

fn criterion_pruning() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs = 1000;
    for case in 0..pairs {
        let n = rng.gen_range(2..=8);
        let m = ScoreMatrix::from_peer_rows(&random_peer_rows(&mut rng, n)).unwrap();
        let v = relevance_scores(&m);
        let scale = if case % 2 == 0 { TauScale::Raw } else { TauScale::Share };
        let hi = if scale == TauScale::Raw { n as f64 * 1.2 } else { 1.2 };
        let (a, b) = (rng.gen_range(0.0..hi), rng.gen_range(0.0..hi));
        let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
        let p1 = prune(&v, t1, scale);
        let p2 = prune(&v, t2, scale);
        assert!(!p1.surviving.is_empty() && !p2.surviving.is_empty(), "case {case}: empty graph");
        assert!(
            p2.surviving.iter().all(|j| p1.surviving.contains(j)),
            "case {case}: surviving({t2}) not within surviving({t1})"
        );
    }
    format!("{pairs} random (relevance, tau1 <= tau2) pairs: nested survivors, never empty")
}

// ---------------------------------------------------------------------------
// 4. reduction equivalence

/// Deterministic stand-in: the reply depends only on the agent and prompt.
struct Digest;

impl Backend for Digest {
    fn complete(&self, agent: &AgentSpec, messages: &[ChatMessage]) -> Result<CompletionResult, BackendError> {
        let prompt: String = messages.iter().map(|m| m.content.as_str()).collect();
        let letter = ["A", "B", "C", "D"][(prompt.len() + agent.agent_id.len()) % 4];
        let text = serde_json::json!({
            "reasoning": format!("{} read {} characters", agent.agent_id, prompt.len()),
            "answer": letter,
        })
        .to_string();
        Ok(CompletionResult {
            usage: Usage::heuristic(messages, &text),
            text,
            latency_ms: 0.0,
        })
    }
}

fn criterion_reduction() -> String {
    let ids = ["g", "p1", "p2", "p3", "p4", "p5"];
    let query = Query::new("What is the capital of Australia?", TaskKind::FreeForm);
    for n in [2usize, 3, 6] {
        let reg = registry(&ids[..n], "g");
        let graph_run = run_goa(&query, &reg, &RunConfig::all_to_all(n), &Digest).unwrap();
        let moa_cfg = RunConfig {
            mode: Mode::Moa,
            moa_layers: 2,
            ..RunConfig::default()
        };
        let moa = run_moa_reduction(&query, &reg, &moa_cfg, &Digest).unwrap();
        let seq = |t: &RunTrace| -> Vec<(String, String)> {
            t.calls
                .iter()
                .map(|c| (c.agent_id.clone(), serde_json::to_string(&c.messages).unwrap()))
                .collect()
        };
        assert_eq!(graph_run.trace.calls.len(), 2 * n + 1, "N={n}");
        assert_eq!(seq(&graph_run.trace), seq(&moa.trace), "N={n}: prompt sequences differ");
        assert_eq!(graph_run.answer, moa.answer, "N={n}");
        for call in graph_run.trace.calls_in(Stage::Layer) {
            let text = &call.messages[0].content;
            assert!(text.contains("What is the capital of Australia?"), "N={n}: query not injected");
            for r in &graph_run.trace.initial {
                assert!(text.contains(&r.message_text()), "N={n}: response of node {} missing", r.node_id);
            }
        }
    }
    "N in {2, 3, 6}: graph run under the reduction settings and the layered run emit byte-identical prompts".into()
}

// ---------------------------------------------------------------------------
// 5. message-passing structure

const INSTRUCTION: &str = "Provide brief reasoning (2-3 key sentences), then output your final answer in JSON format:\n{\"reasoning\": \"<brief reasoning>\", \"answer\": \"<one of the answer choices: A, B, C, D (etc)>\", \"confidence_level\": \"<a float between 0.0 and 1.0>\"}\nPlease strictly output in JSON format.";

fn label(w: f64) -> &'static str {
    if w > 0.7 {
        "high relevance"
    } else if w > 0.4 {
        "moderate relevance"
    } else {
        "low relevance"
    }
}

fn peers_block(peers: &[(usize, f64, String)]) -> String {
    peers
        .iter()
        .map(|(node, w, text)| format!("Model {node} ({}): {text}", label(*w)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn s2t_fixture(question: &str, own: &str, peers: &[(usize, f64, String)]) -> String {
    format!(
        "Refine your answer by considering other models' responses.\n\nQuestion: {question}\n\nYour initial response: {own}\n\nOther models' responses (ranked by relevance):\n\n{}\n\nIntegrate useful insights from these responses to improve your answer. Be critical — some information may be incorrect.\n\n{INSTRUCTION}",
        peers_block(peers)
    )
}

fn t2s_fixture(question: &str, own: &str, peers: &[(usize, f64, String)]) -> String {
    format!(
        "Other models refined their answers after seeing yours. Use their improvements to finalize your response.\n\nQuestion: {question}\n\nYour initial response: {own}\n\nUpdated responses from other models:\n\n{}\n\nWrite your final response, incorporating valuable refinements. Be critical — some information may be incorrect.\n\n{INSTRUCTION}",
        peers_block(peers)
    )
}

/// Scripted run: `picks` is the meta reply, `rows[i]` node i's scores over its
/// peers in node order. Each agent's phase replies carry distinct text.
fn structured_run(ids: &[&str], picks: &str, rows: &[&str]) -> RunTrace {
    let reg = registry(ids, ids[0]);
    let selection = parse_selection(picks, rows.len(), ids.len() - 1).unwrap();
    let mut entries = vec![ScriptEntry::seq(ids[0], 0, picks)];
    let mut next: BTreeMap<&str, u64> = BTreeMap::from([(ids[0], 1)]);
    let mut push = |agent: &str, text: String| {
        let n = next.entry(ids[ids.iter().position(|a| *a == agent).unwrap()]).or_insert(0);
        entries.push(ScriptEntry::seq(agent, *n, text));
        *n += 1;
    };
    for (node, &a) in selection.iter().enumerate() {
        let agent = ids[a];
        push(agent, format!(r#"{{"reasoning": "initial view of node {node}", "answer": "A"}}"#));
    }
    for (node, &a) in selection.iter().enumerate() {
        push(ids[a], rows[node].to_string());
    }
    for (node, &a) in selection.iter().enumerate() {
        push(ids[a], format!(r#"{{"reasoning": "first refinement of node {node}", "answer": "B"}}"#));
        push(ids[a], format!(r#"{{"reasoning": "second refinement of node {node}", "answer": "C"}}"#));
    }
    let backend = ScriptedBackend::new(entries).unwrap();
    let cfg = RunConfig {
        top_k: rows.len(),
        parallel: false,
        ..RunConfig::default()
    };
    let query = Query::new("Which option is right?", TaskKind::MultipleChoice);
    run_goa(&query, &reg, &cfg, &backend).unwrap().trace
}

/// Independent recomputation of order and weights from the score rows.
fn check_structure(trace: &RunTrace, rows: &[Vec<f64>]) {
    let n = rows.len();
    let mut s = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        let peers: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let total: f64 = row.iter().sum();
        for (&j, v) in peers.iter().zip(row) {
            s[j] += v / total;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
    assert_eq!(trace.graph.as_ref().unwrap().order, order, "rank order");

    let q = &trace.query.question;
    let initial: Vec<String> = trace.initial.iter().map(|r| format!("{}\nAnswer: {}", r.reasoning, r.answer)).collect();
    let r1: BTreeMap<usize, String> = trace
        .source_to_target
        .iter()
        .map(|r| (r.node_id, format!("{}\nAnswer: {}", r.reasoning, r.answer)))
        .collect();
    let r_prime = |node: usize| r1.get(&node).cloned().unwrap_or_else(|| initial[node].clone());

    let s2t: BTreeMap<u32, &str> = trace.calls_in(Stage::SourceToTarget).map(|c| (c.key.node, c.messages[0].content.as_str())).collect();
    let t2s: BTreeMap<u32, &str> = trace.calls_in(Stage::TargetToSource).map(|c| (c.key.node, c.messages[0].content.as_str())).collect();
    assert_eq!(s2t.len(), n - 1);
    assert_eq!(t2s.len(), n - 1);
    assert!(!s2t.contains_key(&(order[0] as u32)), "top rank gets no phase-one prompt");
    assert!(!t2s.contains_key(&(order[n - 1] as u32)), "bottom rank gets no phase-two prompt");
    for r in 1..n {
        let node = order[r];
        let better_total: f64 = order[..r].iter().map(|&j| s[j]).sum();
        let peers: Vec<(usize, f64, String)> = order[..r].iter().map(|&j| (j, s[j] / better_total, initial[j].clone())).collect();
        let want = s2t_fixture(q, &initial[node], &peers);
        assert_eq!(s2t[&(node as u32)], want, "phase-one prompt of node {node}");
    }
    for r in 0..n - 1 {
        let node = order[r];
        let worse_total: f64 = order[r + 1..].iter().map(|&j| s[j]).sum();
        let peers: Vec<(usize, f64, String)> = order[r + 1..].iter().map(|&j| (j, s[j] / worse_total, r_prime(j))).collect();
        let want = t2s_fixture(q, &initial[node], &peers);
        assert_eq!(t2s[&(node as u32)], want, "phase-two prompt of node {node}");
    }
}

fn criterion_structure() -> String {
    let three_rows = ["0.7, 0.3", "0.6, 0.4", "0.5, 0.5"];
    let trace = structured_run(&["g", "x", "y", "z"], "3, 1, 2", &three_rows);
    check_structure(&trace, &[vec![0.7, 0.3], vec![0.6, 0.4], vec![0.5, 0.5]]);
    let relevance = &trace.relevance.as_ref().unwrap().scores;
    for (got, want) in relevance.iter().zip([1.1, 1.2, 0.7]) {
        assert!((got - want).abs() <= TOL);
    }

    let four_rows = ["0.6, 0.3, 0.1", "0.5, 0.3, 0.2", "0.3, 0.6, 0.1", "0.5, 0.3, 0.2"];
    let trace4 = structured_run(&["g", "w", "x", "y"], "0, 1, 2, 3", &four_rows);
    let parsed: Vec<Vec<f64>> = four_rows
        .iter()
        .map(|r| r.split(", ").map(|v| v.parse().unwrap()).collect())
        .collect();
    check_structure(&trace4, &parsed);
    "3-node (order [1, 0, 2]) and 4-node (order [1, 0, 2, 3]) phase prompts match fixtures byte for byte".into()
}

// ---------------------------------------------------------------------------
// 6. synthetic suite

/// Brute-force simulation of the suite rules, independent of the engine.
struct Oracle {
    graph_max_correct: usize,
    graph_max_calls: usize,
    reverse_correct: usize,
    best_single: usize,
}

fn oracle(items: &[SyntheticItem]) -> Oracle {
    let answer = |item: &SyntheticItem, agent: usize| {
        if AGENTS[agent] == item.domain {
            item.gold
        } else {
            (item.gold + 1) % 4
        }
    };
    let mut o = Oracle {
        graph_max_correct: 0,
        graph_max_calls: 0,
        reverse_correct: 0,
        best_single: 0,
    };
    for item in items {
        let nodes = item.selection;
        let mut s = [0.0f64; 3];
        for i in 0..3 {
            let peers: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let golds = peers.iter().filter(|&&j| answer(item, nodes[j]) == item.gold).count();
            for &j in &peers {
                s[j] += if golds == 0 || golds == peers.len() {
                    1.0 / peers.len() as f64
                } else if answer(item, nodes[j]) == item.gold {
                    0.9 / golds as f64
                } else {
                    0.1 / (peers.len() - golds) as f64
                };
            }
        }
        let survivors: Vec<usize> = (0..3).filter(|&j| s[j] >= 0.05).collect();
        assert_eq!(survivors.len(), 3);
        let mut order = survivors.clone();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        o.graph_max_correct += usize::from(answer(item, nodes[order[0]]) == item.gold);
        o.reverse_correct += usize::from(answer(item, nodes[order[2]]) == item.gold);
        o.graph_max_calls += 1 + 3 + 3 + 2 + 2;
    }
    o.best_single = (0..AGENTS.len())
        .map(|a| items.iter().filter(|i| answer(i, a) == i.gold).count())
        .max()
        .unwrap();
    o
}

fn criterion_synthetic() -> String {
    let suite = suite();
    let o = oracle(&suite.specs);
    assert_eq!(o.graph_max_correct, 60, "oracle graph max");
    assert_eq!(o.graph_max_calls, 60 * 11, "oracle graph max calls");
    assert_eq!(o.best_single, 20, "oracle best single");
    assert!(o.reverse_correct <= 20, "oracle reverse");

    let backend = suite_backend();
    let opts = BenchOptions {
        threads: 4,
        trace_dir: None,
    };
    let bench = |cfg: &RunConfig| run_benchmark(&suite.items, &suite.registry, cfg, backend, &opts).unwrap().report;
    let max = bench(&RunConfig::default());
    assert_eq!(max.correct_count, o.graph_max_correct);
    assert_eq!(max.mean_calls, 11.0);
    let best_single = AGENTS
        .iter()
        .map(|a| {
            bench(&RunConfig {
                mode: Mode::Single,
                agent: Some(a.to_string()),
                ..RunConfig::default()
            })
            .correct_count
        })
        .max()
        .unwrap();
    assert_eq!(best_single, o.best_single);
    let reverse = bench(&RunConfig {
        pass: agent_graph::message_passing::PassConfig {
            reverse_direction: true,
            ..Default::default()
        },
        ..RunConfig::default()
    });
    assert_eq!(reverse.correct_count, o.reverse_correct);
    assert!(reverse.correct_count <= 20);
    format!(
        "graph max {}/60 (mean calls {}), best single agent {}/60, reverse {}/60; all equal to the oracle",
        max.correct_count, max.mean_calls, best_single, reverse.correct_count
    )
}

// ---------------------------------------------------------------------------
// 7. ablation switches

fn labels_in(trace: &RunTrace) -> Vec<String> {
    let re = Regex::new(r"\nModel \d+ \((\w+) relevance\): ").unwrap();
    trace
        .calls
        .iter()
        .filter(|c| matches!(c.key.stage, Stage::SourceToTarget | Stage::TargetToSource))
        .flat_map(|c| {
            re.captures_iter(&format!("\n{}", c.messages[0].content))
                .map(|m| m[1].to_string())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn criterion_ablations() -> String {
    let suite = suite();
    let backend = suite_backend();
    let item = &suite.items[0];
    let go = |f: fn(&mut RunConfig)| {
        let mut cfg = RunConfig::default();
        f(&mut cfg);
        run(&item.query, &suite.registry, &cfg, backend).unwrap().trace
    };
    let phases = |t: &RunTrace| (stage_calls(t, Stage::SourceToTarget), stage_calls(t, Stage::TargetToSource));
    let base = go(|_| {});
    let no_t2s = go(|c| c.pass.enable_t2s = false);
    let no_s2t = go(|c| c.pass.enable_s2t = false);
    assert_eq!(phases(&base), (2, 2));
    assert_eq!(phases(&no_t2s), (2, 0));
    assert_eq!(phases(&no_s2t), (0, 2));

    let base_labels = labels_in(&base);
    assert!(base_labels.iter().any(|l| l != "high"), "weighted run should mix labels");
    let uniform = go(|c| c.pass.uniform_weights = true);
    let uniform_labels = labels_in(&uniform);
    assert_eq!(uniform_labels.len(), base_labels.len());
    assert!(uniform_labels.iter().all(|l| l == "high"));

    let reverse = go(|c| c.pass.reverse_direction = true);
    let mut inverted = base.graph.as_ref().unwrap().order.clone();
    inverted.reverse();
    assert_eq!(reverse.graph.as_ref().unwrap().order, inverted);
    format!(
        "phase calls 2/2 -> 2/0 (no t2s) -> 0/2 (no s2t); {} labels all high under uniform weights; order {:?} -> {:?} under reverse",
        uniform_labels.len(),
        base.graph.as_ref().unwrap().order,
        inverted
    )
}

// ---------------------------------------------------------------------------
// 8. determinism

fn criterion_determinism() -> String {
    let suite = suite();
    let backend = suite_backend();
    let cfg = RunConfig {
        pooling: Pooling::Mean,
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let opts = BenchOptions {
                threads: 4,
                trace_dir: Some(d.path().to_path_buf()),
            };
            run_benchmark(&suite.items, &suite.registry, &cfg, backend, &opts).unwrap()
        })
        .collect();
    assert_eq!(runs[0].report.to_untimed_json(), runs[1].report.to_untimed_json());
    let mut files = 0;
    for item in &suite.items {
        let read = |d: &tempfile::TempDir| {
            let text = std::fs::read_to_string(d.path().join(format!("{}.json", item.item_id))).unwrap();
            let mut v: Value = serde_json::from_str(&text).unwrap();
            agent_graph::trace::strip_keys(&mut v, &agent_graph::trace::TIMING_KEYS);
            agent_graph::trace::canonical_json(&v)
        };
        assert_eq!(read(&dirs[0]), read(&dirs[1]), "trace of {}", item.item_id);
        files += 1;
    }
    for (a, b) in runs[0].traces.iter().zip(&runs[1].traces) {
        assert_eq!(a.to_untimed_json(), b.to_untimed_json());
    }
    format!("two 4-thread benchmark runs: report and {files} trace files byte-identical without timing fields")
}

// ---------------------------------------------------------------------------
// 9. parser robustness

fn criterion_parsers() -> String {
    let corpus: Vec<Value> =
        serde_json::from_str(include_str!("fixtures/parser_corpus.json")).expect("corpus parses");
    assert!(corpus.len() >= 30, "corpus too small");
    let mut failures = Vec::new();
    for case in &corpus {
        let name = case["name"].as_str().unwrap();
        let input = case["input"].as_str().unwrap();
        let expected = &case["expected"];
        let ok = match case["parser"].as_str().unwrap() {
            "structured" => match (parse_structured_response(input), expected) {
                (Err(_), Value::Null) => true,
                (Ok(f), Value::Object(e)) => {
                    f.reasoning == e["reasoning"].as_str().unwrap()
                        && f.answer == e["answer"].as_str().unwrap()
                        && f.confidence == e["confidence"].as_f64()
                }
                _ => false,
            },
            "scores" => {
                let n = case["expected_count"].as_u64().unwrap() as usize;
                match (parse_scores(input, n), expected) {
                    (None, Value::Null) => true,
                    (Some(got), Value::Array(want)) => {
                        got.len() == want.len()
                            && got.iter().zip(want).all(|(g, w)| (g - w.as_f64().unwrap()).abs() <= 1e-12)
                    }
                    _ => false,
                }
            }
            "selection" => {
                let k = case["k"].as_u64().unwrap() as usize;
                let max = case["max_index"].as_u64().unwrap() as usize;
                match (parse_selection(input, k, max), expected) {
                    (Err(_), Value::Null) => true,
                    (Ok(got), Value::Array(want)) => {
                        got.iter().map(|&g| g as u64).collect::<Vec<_>>()
                            == want.iter().map(|w| w.as_u64().unwrap()).collect::<Vec<_>>()
                    }
                    _ => false,
                }
            }
            other => panic!("unknown parser {other}"),
        };
        if !ok {
            failures.push(name.to_string());
        }
    }
    assert!(failures.is_empty(), "cases with unexpected results: {failures:?}");
    format!("{} malformed/edge-case outputs behave as documented", corpus.len())
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 call counts", criterion_call_counts),
        ("2 normalization invariants", criterion_normalization),
        ("3 pruning monotonicity", criterion_pruning),
        ("4 reduction equivalence", criterion_reduction),
        ("5 message-passing structure", criterion_structure),
        ("6 synthetic expert suite", criterion_synthetic),
        ("7 ablation switches", criterion_ablations),
        ("8 determinism", criterion_determinism),
        ("9 parser robustness", criterion_parsers),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = std::time::Instant::now();
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{:.2}s]", started.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
