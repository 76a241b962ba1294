//! Seeded domain-expert suite for offline runs.
//!
//! Six agents (general, code, math, biomedical, finance, legal) and sixty
//! four-choice questions, twenty in each of math, biomedical and legal. The
//! in-domain expert always answers the gold letter and everyone else answers
//! the letter after it. Scorers give gold-answering peers 0.9 and the rest
//! 0.1, the meta agent selects the expert plus two seeded off-domain agents,
//! and synthesis takes a share-weighted vote over the listed answers.
//!
//! A [`Responder`] implements these rules; its answers to every prompt the
//! suite configurations issue are recorded into an exact-hash script, so
//! replays need nothing but the script file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{choice_letter, BenchItem};
use crate::backend::{
    save_script, Backend, ChatMessage, CompletionResult, RecordingBackend, ScriptEntry, ScriptedBackend, Usage,
};
use crate::error::BackendError;
use crate::graph::{Topology, TauScale};
use crate::pipeline::{run, Mode, Pooling, RunConfig};
use crate::query::{Query, TaskKind};
use crate::registry::{save_registry, AgentSpec, Endpoint, GenerationParams, ModelCard, Registry};

pub const AGENTS: [&str; 6] = ["general", "code", "math", "biomedical", "finance", "legal"];
pub const DOMAINS: [&str; 3] = ["math", "biomedical", "legal"];
pub const ITEMS_PER_DOMAIN: usize = 20;
pub const SCRIPT_FILE: &str = "script.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub item_id: String,
    pub domain: String,
    /// Gold choice index, 0..4.
    pub gold: usize,
    /// Registry indices the meta agent picks: the expert first.
    pub selection: [usize; 3],
}

impl SyntheticItem {
    pub fn wrong(&self) -> usize {
        (self.gold + 1) % 4
    }

    pub fn expert(&self) -> usize {
        AGENTS.iter().position(|a| *a == self.domain).expect("domain agent exists")
    }

    /// Choice index `agent` answers with.
    pub fn answer_of(&self, agent: &str) -> usize {
        if agent == self.domain {
            self.gold
        } else {
            self.wrong()
        }
    }

    pub fn question(&self) -> String {
        format!(
            "[{}] Within {}, which of the following statements is correct?",
            self.item_id, self.domain
        )
    }

    pub fn choices(&self) -> Vec<String> {
        (0..4)
            .map(|i| format!("{} statement {}", self.domain, choice_letter(i)))
            .collect()
    }
}

/// Items in domain order, twenty per domain.
pub fn synthetic_items(seed: u64) -> Vec<SyntheticItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for domain in DOMAINS {
        let expert = AGENTS.iter().position(|a| *a == domain).unwrap();
        let others: Vec<usize> = (0..AGENTS.len()).filter(|&i| i != expert).collect();
        for n in 1..=ITEMS_PER_DOMAIN {
            let gold = rng.gen_range(0..4);
            let picks: Vec<usize> = others.choose_multiple(&mut rng, 2).copied().collect();
            items.push(SyntheticItem {
                item_id: format!("{domain}-{n:02}"),
                domain: domain.to_string(),
                gold,
                selection: [expert, picks[0], picks[1]],
            });
        }
    }
    items
}

pub fn synthetic_registry(script: impl Into<PathBuf>) -> Registry {
    let script = script.into();
    let agents = AGENTS
        .iter()
        .map(|&name| AgentSpec {
            agent_id: name.to_string(),
            card: ModelCard {
                model_id: format!("{name}-7b"),
                domain: name.to_string(),
                task_specialization: if name == "general" {
                    "general instruction following".into()
                } else {
                    format!("{name} question answering")
                },
                parameter_size: "7B".into(),
                special_features: String::new(),
            },
            endpoint: Endpoint::Scripted(script.clone()),
            params: GenerationParams::default(),
        })
        .collect();
    Registry::new(agents, Some("general")).expect("fixed registry is valid")
}

pub fn bench_item(item: &SyntheticItem) -> BenchItem {
    let choices = item.choices();
    BenchItem {
        item_id: item.item_id.clone(),
        query: Query::new(super::render_choices(&item.question(), &choices), TaskKind::MultipleChoice),
        choices: Some(choices),
        gold: choice_letter(item.gold).to_string(),
    }
}

/// The configurations the recorded script covers, by name.
pub fn suite_configs() -> Vec<(String, RunConfig)> {
    let base = RunConfig::default();
    let mut out = vec![
        ("graph_max".to_string(), base.clone()),
        (
            "graph_mean".into(),
            RunConfig {
                pooling: Pooling::Mean,
                ..base.clone()
            },
        ),
    ];
    let mut with_pass = |name: &str, f: fn(&mut RunConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        out.push((name.to_string(), cfg));
    };
    with_pass("reverse", |c| c.pass.reverse_direction = true);
    with_pass("no_s2t", |c| c.pass.enable_s2t = false);
    with_pass("no_t2s", |c| c.pass.enable_t2s = false);
    with_pass("uniform_weights", |c| c.pass.uniform_weights = true);
    with_pass("tau_2_5", |c| c.tau = 2.5);
    with_pass("moa", |c| {
        c.mode = Mode::Moa;
        c.moa_layers = 3;
    });
    for agent in AGENTS {
        out.push((
            format!("single_{agent}"),
            RunConfig {
                mode: Mode::Single,
                agent: Some(agent.to_string()),
                ..base.clone()
            },
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub correct: usize,
    pub mean_calls: f64,
}

/// Rule-based backend behind the suite.
pub struct Responder {
    items: BTreeMap<String, SyntheticItem>,
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[((?:math|biomedical|legal)-\d{2})\]").unwrap())
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Answer: ([A-D])").unwrap())
}

/// Splits `section` at every match of `header`, returning the header's
/// captures and the answer letter in the text that follows it.
fn answers_after<'t>(section: &'t str, header: &Regex) -> Vec<(regex::Captures<'t>, Option<char>)> {
    let caps: Vec<regex::Captures> = header.captures_iter(section).collect();
    let ends: Vec<usize> = caps
        .iter()
        .skip(1)
        .map(|c| c.get(0).unwrap().start())
        .chain([section.len()])
        .collect();
    caps.into_iter()
        .zip(ends)
        .map(|(c, end)| {
            let body = &section[c.get(0).unwrap().end()..end];
            let letter = answer_re()
                .captures(body)
                .and_then(|a| a[1].chars().next());
            (c, letter)
        })
        .collect()
}

fn between<'t>(text: &'t str, start: &str, end: &str) -> &'t str {
    let from = text.find(start).map_or(0, |i| i + start.len());
    let to = text[from..].find(end).map_or(text.len(), |i| from + i);
    &text[from..to]
}

impl Responder {
    pub fn new(items: &[SyntheticItem]) -> Self {
        Self {
            items: items.iter().map(|i| (i.item_id.clone(), i.clone())).collect(),
        }
    }

    fn respond(&self, agent: &str, prompt: &str) -> Result<String, String> {
        let tag = tag_re()
            .captures(prompt)
            .ok_or_else(|| "prompt carries no item tag".to_string())?;
        let item = self.items.get(&tag[1]).ok_or_else(|| format!("unknown item {}", &tag[1]))?;
        let gold = choice_letter(item.gold);
        if prompt.starts_with("Select ") {
            let [a, b, c] = item.selection;
            return Ok(format!("{a}, {b}, {c}"));
        }
        if prompt.starts_with("Score the following") {
            static HEADER: OnceLock<Regex> = OnceLock::new();
            let header = HEADER.get_or_init(|| Regex::new(r"(?m)^Model \d+: ").unwrap());
            let section = between(prompt, "):\n\n", "\n\nAssign a score");
            let golds: Vec<bool> = answers_after(section, header)
                .into_iter()
                .map(|(_, l)| l == Some(gold))
                .collect();
            return Ok(score_row(&golds)
                .iter()
                .map(|s| format!("{s:.4}"))
                .collect::<Vec<_>>()
                .join(", "));
        }
        if prompt.starts_with("Synthesize these") {
            static HEADER: OnceLock<Regex> = OnceLock::new();
            let header = HEADER.get_or_init(|| {
                Regex::new(r"(?m)^Model \d+(?: \(relevance share: ([0-9.]+), [a-z]+ relevance\))?: ").unwrap()
            });
            let section = between(prompt, "Model responses:\n", "\n\nProduce an accurate");
            let votes: Vec<(char, f64)> = answers_after(section, header)
                .into_iter()
                .filter_map(|(c, l)| {
                    let w = c.get(1).map_or(1.0, |m| m.as_str().parse().unwrap_or(0.0));
                    l.map(|l| (l, w))
                })
                .collect();
            let winner = weighted_vote(&votes).ok_or_else(|| "no answers to synthesize".to_string())?;
            return Ok(json!({
                "reasoning": "The weighted reading of the listed responses settles the question.",
                "answer": winner.to_string(),
                "confidence_level": 0.8,
            })
            .to_string());
        }
        let letter = choice_letter(item.answer_of(agent));
        let (reasoning, confidence) = if agent == item.domain {
            (format!("This is squarely a {} question and the facts point one way.", item.domain), 0.9)
        } else {
            (format!("Reasoning from general {agent} knowledge, one statement looks closest."), 0.4)
        };
        Ok(json!({"reasoning": reasoning, "answer": letter.to_string(), "confidence_level": confidence}).to_string())
    }
}

impl Backend for Responder {
    fn complete(&self, agent: &AgentSpec, messages: &[ChatMessage]) -> Result<CompletionResult, BackendError> {
        let prompt: String = messages.iter().map(|m| m.content.as_str()).collect();
        let text = self.respond(&agent.agent_id, &prompt).map_err(BackendError::Script)?;
        Ok(CompletionResult {
            usage: Usage::heuristic(messages, &text),
            text,
            latency_ms: 0.0,
        })
    }
}

/// Scores a scorer hands out: gold-answering peers share 0.9, the rest share
/// 0.1; uniform when all or none answer gold.
pub fn score_row(peer_is_gold: &[bool]) -> Vec<f64> {
    let m = peer_is_gold.len();
    let g = peer_is_gold.iter().filter(|&&b| b).count();
    if g == 0 || g == m {
        return vec![1.0 / m as f64; m];
    }
    peer_is_gold
        .iter()
        .map(|&b| if b { 0.9 / g as f64 } else { 0.1 / (m - g) as f64 })
        .collect()
}

/// Letter with the largest summed weight; ties go to the letter listed first.
pub fn weighted_vote(votes: &[(char, f64)]) -> Option<char> {
    let mut tally: Vec<(char, f64)> = Vec::new();
    for &(letter, w) in votes {
        match tally.iter_mut().find(|(l, _)| *l == letter) {
            Some(entry) => entry.1 += w,
            None => tally.push((letter, w)),
        }
    }
    let mut best: Option<(char, f64)> = None;
    for (l, w) in tally {
        if best.is_none_or(|(_, bw)| w > bw + 1e-12) {
            best = Some((l, w));
        }
    }
    best.map(|(l, _)| l)
}

fn round2(x: f64) -> f64 {
    format!("{x:.2}").parse().unwrap()
}

/// Predicted (answer index, call count) for one item under `cfg`, derived
/// from the suite rules alone.
pub fn predict(item: &SyntheticItem, cfg: &RunConfig) -> (usize, usize) {
    let answer = |agent_index: usize| item.answer_of(AGENTS[agent_index]);
    match cfg.mode {
        Mode::Single => (item.answer_of(cfg.agent.as_deref().unwrap_or("general")), 1),
        Mode::Moa => {
            let n = AGENTS.len();
            let votes: Vec<(char, f64)> = (0..n).map(|i| (choice_letter(answer(i)), 1.0)).collect();
            let winner = weighted_vote(&votes).unwrap();
            let calls = n * cfg.moa_layers as usize + usize::from(n > 1);
            ((winner as u8 - b'A') as usize, calls)
        }
        Mode::Graph => {
            assert_eq!(cfg.topology, Topology::Ranked, "suite predictions cover ranked graphs");
            assert_eq!(cfg.top_k, 3, "suite predictions cover k=3");
            let nodes = item.selection;
            let is_gold: Vec<bool> = nodes.iter().map(|&a| answer(a) == item.gold).collect();
            let mut relevance = [0.0f64; 3];
            for i in 0..3 {
                let peers: Vec<usize> = (0..3).filter(|&j| j != i).collect();
                let row = score_row(&peers.iter().map(|&j| is_gold[j]).collect::<Vec<_>>());
                for (&j, s) in peers.iter().zip(row) {
                    relevance[j] += s;
                }
            }
            let total: f64 = relevance.iter().sum();
            let measure = |j: usize| match cfg.tau_scale {
                TauScale::Raw => relevance[j],
                TauScale::Share => relevance[j] / total,
            };
            let mut order: Vec<usize> = (0..3).filter(|&j| measure(j) >= cfg.tau).collect();
            if order.is_empty() {
                let best = (0..3).fold(0, |b, j| if relevance[j] > relevance[b] { j } else { b });
                order.push(best);
            }
            order.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
            if cfg.pass.reverse_direction {
                order.reverse();
            }
            let kept = order.len();
            let mut calls = 1 + 3 + 3;
            if kept > 1 {
                calls += usize::from(cfg.pass.enable_s2t) * (kept - 1);
                calls += usize::from(cfg.pass.enable_t2s) * (kept - 1);
            }
            let pick = match cfg.pooling {
                Pooling::Max => answer(nodes[order[0]]),
                Pooling::Mean if kept == 1 => answer(nodes[order[0]]),
                Pooling::Mean => {
                    calls += 1;
                    let kept_total: f64 = order.iter().map(|&j| relevance[j]).sum();
                    let votes: Vec<(char, f64)> = order
                        .iter()
                        .map(|&j| {
                            let w = if cfg.pass.uniform_weights { 1.0 } else { round2(relevance[j] / kept_total) };
                            (choice_letter(answer(nodes[j])), w)
                        })
                        .collect();
                    (weighted_vote(&votes).unwrap() as u8 - b'A') as usize
                }
            };
            (pick, calls)
        }
    }
}

pub struct SyntheticSuite {
    pub seed: u64,
    pub specs: Vec<SyntheticItem>,
    pub items: Vec<BenchItem>,
    /// Registry whose agents all point at [`SCRIPT_FILE`].
    pub registry: Registry,
    pub script: Vec<ScriptEntry>,
    /// Predicted outcome per configuration name in [`suite_configs`].
    pub expected: BTreeMap<String, Expected>,
}

/// Generates the items, records the responder over every suite
/// configuration and predicts each configuration's outcome.
pub fn build_synthetic_suite(seed: u64) -> Result<SyntheticSuite, BackendError> {
    let specs = synthetic_items(seed);
    let items: Vec<BenchItem> = specs.iter().map(bench_item).collect();
    let registry = synthetic_registry(SCRIPT_FILE);
    let recorder = RecordingBackend::new(Responder::new(&specs));
    let mut expected = BTreeMap::new();
    for (name, cfg) in suite_configs() {
        let mut correct = 0;
        let mut calls = 0;
        for (spec, item) in specs.iter().zip(&items) {
            run(&item.query, &registry, &cfg, &recorder)
                .map_err(|f| BackendError::Script(format!("recording {name} on {}: {}", spec.item_id, f.error)))?;
            let (answer, n) = predict(spec, &cfg);
            correct += usize::from(answer == spec.gold);
            calls += n;
        }
        expected.insert(
            name,
            Expected {
                correct,
                mean_calls: calls as f64 / specs.len() as f64,
            },
        );
    }
    Ok(SyntheticSuite {
        seed,
        specs,
        items,
        registry,
        script: recorder.entries(),
        expected,
    })
}

impl SyntheticSuite {
    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.script.clone()).expect("recorded script is consistent")
    }

    /// Writes `registry.json`, `script.json`, `dataset.jsonl` and
    /// `expected.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_registry(&self.registry, dir.join("registry.json")).map_err(std::io::Error::other)?;
        save_script(&self.script, dir.join(SCRIPT_FILE))?;
        let mut lines = String::new();
        for spec in &self.specs {
            let record = json!({
                "id": spec.item_id,
                "question": spec.question(),
                "choices": spec.choices(),
                "gold": choice_letter(spec.gold).to_string(),
                "kind": "multiple_choice",
            });
            lines.push_str(&record.to_string());
            lines.push('\n');
        }
        std::fs::write(dir.join("dataset.jsonl"), lines)?;
        let expected = json!({"seed": self.seed, "configs": self.expected});
        std::fs::write(dir.join("expected.json"), crate::trace::canonical_json(&expected))
    }
}
