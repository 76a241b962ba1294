//! Benchmark harness: dataset loading, answer matching, per-item runs and
//! aggregate reports.

pub mod synthetic;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::Backend;
use crate::error::DatasetError;
use crate::exec;
use crate::pipeline::{run, RunConfig};
use crate::pooling::{choice_in, last_boxed};
use crate::query::{Query, TaskKind};
use crate::registry::Registry;
use crate::trace::{canonical_json, strip_keys, Metrics, RunTrace, TIMING_KEYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub item_id: String,
    /// Question text with any choices already rendered into it.
    pub query: Query,
    pub choices: Option<Vec<String>>,
    /// Choice letter, normalized expression or reference text.
    pub gold: String,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<Value>,
    question: Option<String>,
    #[serde(default)]
    choices: Option<Vec<String>>,
    gold: Option<Value>,
    #[serde(default)]
    kind: Option<String>,
}

pub fn choice_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// `question` followed by one `X. choice` line per choice.
pub fn render_choices(question: &str, choices: &[String]) -> String {
    let mut out = question.trim_end().to_string();
    out.push('\n');
    for (i, c) in choices.iter().enumerate() {
        let _ = write!(out, "\n{}. {}", choice_letter(i), c);
    }
    out
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_record(line: &str, line_no: usize, kind_override: Option<TaskKind>) -> Result<BenchItem, DatasetError> {
    let bad = |reason: String| DatasetError::MalformedRecord { line_no, reason };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let item_id = raw
        .id
        .as_ref()
        .and_then(value_text)
        .ok_or_else(|| bad("missing id".into()))?;
    let question = raw
        .question
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| bad("missing question".into()))?;
    let gold = raw
        .gold
        .as_ref()
        .and_then(value_text)
        .filter(|g| !g.trim().is_empty())
        .ok_or_else(|| bad("missing gold".into()))?;
    let kind = match kind_override {
        Some(k) => k,
        None => {
            let k = raw.kind.ok_or_else(|| bad("missing kind".into()))?;
            TaskKind::parse(&k).ok_or_else(|| bad(format!("unknown kind `{k}`")))?
        }
    };
    match kind {
        TaskKind::MultipleChoice => {
            let choices = raw.choices.ok_or_else(|| bad("multiple-choice record without choices".into()))?;
            if choices.len() < 2 || choices.len() > 26 {
                return Err(bad(format!("{} choices", choices.len())));
            }
            let gold = gold.trim().to_ascii_uppercase();
            let valid = gold.len() == 1 && (0..choices.len()).any(|i| gold.starts_with(choice_letter(i)));
            if !valid {
                return Err(bad(format!("gold `{gold}` is not a choice letter")));
            }
            Ok(BenchItem {
                item_id,
                query: Query::new(render_choices(&question, &choices), kind),
                choices: Some(choices),
                gold,
            })
        }
        TaskKind::Math => Ok(BenchItem {
            item_id,
            query: Query::new(question, kind),
            choices: raw.choices,
            gold: normalize_math(&gold),
        }),
        TaskKind::Code | TaskKind::FreeForm => Ok(BenchItem {
            item_id,
            query: Query::new(question, kind),
            choices: raw.choices,
            gold: gold.trim().to_string(),
        }),
    }
}

/// Reads line-delimited JSON records `{id, question, choices?, gold, kind}`.
/// `kind` overrides every record's own kind. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, kind: Option<TaskKind>) -> Result<Vec<BenchItem>, DatasetError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1, kind))
        .collect()
}

/// Strips `$` and whitespace, unwraps `\boxed{}`, rewrites `\frac{a}{b}` and
/// `\dfrac{a}{b}` as `a/b`.
pub fn normalize_math(s: &str) -> String {
    let inner = last_boxed(s).unwrap_or_else(|| s.to_string());
    let mut t: String = inner.chars().filter(|c| !c.is_whitespace() && *c != '$').collect();
    for cmd in ["\\dfrac{", "\\tfrac{", "\\frac{"] {
        while let Some(start) = t.find(cmd) {
            let Some((num, after_num)) = braced(&t[start + cmd.len() - 1..]) else {
                break;
            };
            let rest = &t[start + cmd.len() - 1 + after_num..];
            let Some((den, after_den)) = braced(rest) else {
                break;
            };
            let tail = rest[after_den..].to_string();
            t = format!("{}{num}/{den}{tail}", &t[..start]);
        }
    }
    t.trim_end_matches('.').to_string()
}

/// Contents of the brace group opening `s`, and the byte length consumed.
fn braced(s: &str) -> Option<(String, usize)> {
    if !s.starts_with('{') {
        return None;
    }
    let mut depth = 0;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((s[1..i].to_string(), i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Letter an extracted multiple-choice answer commits to: a leading letter
/// not followed by another letter (`b`, `B) because`), else the first
/// standalone capital choice letter.
pub fn leading_choice(extracted: &str) -> Option<char> {
    let t = extracted.trim().trim_start_matches(['(', '[', '*']);
    let mut chars = t.chars();
    let first = chars.next()?;
    let next = chars.next();
    if first.is_ascii_alphabetic() && !next.is_some_and(|c| c.is_alphabetic()) {
        return Some(first.to_ascii_uppercase());
    }
    choice_in(extracted).and_then(|s| s.chars().next())
}

pub fn match_answer(extracted: &str, item: &BenchItem) -> bool {
    match item.query.task_kind {
        TaskKind::MultipleChoice => {
            leading_choice(extracted).is_some_and(|c| item.gold.eq_ignore_ascii_case(&c.to_string()))
        }
        TaskKind::Math => {
            let e = normalize_math(extracted);
            !e.is_empty() && e == normalize_math(&item.gold)
        }
        TaskKind::Code | TaskKind::FreeForm => extracted.trim() == item.gold.trim(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub answer: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub metrics: Metrics,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub items: Vec<ItemResult>,
    pub item_count: usize,
    pub correct_count: usize,
    /// Percent.
    pub accuracy: f64,
    pub mean_calls: f64,
    pub mean_tokens: f64,
    pub mean_wall_ms: f64,
}

const REPORT_TIMING_KEYS: [&str; 3] = [TIMING_KEYS[0], TIMING_KEYS[1], "mean_wall_ms"];

impl Report {
    /// Aggregates `items`, sorted by id.
    pub fn from_items(mut items: Vec<ItemResult>) -> Self {
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let n = items.len();
        let mean = |f: &dyn Fn(&ItemResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                items.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let correct_count = items.iter().filter(|i| i.correct).count();
        Self {
            item_count: n,
            correct_count,
            accuracy: if n == 0 { 0.0 } else { 100.0 * correct_count as f64 / n as f64 },
            mean_calls: mean(&|i| i.metrics.calls as f64),
            mean_tokens: mean(&|i| i.metrics.tokens() as f64),
            mean_wall_ms: mean(&|i| i.metrics.wall_ms),
            items,
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn to_untimed_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        strip_keys(&mut v, &REPORT_TIMING_KEYS);
        canonical_json(&v)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:<16} {:<6} {:>7} {:>5}", "item", "answer", "gold", "correct", "calls");
        for i in &self.items {
            let answer = i.answer.as_deref().unwrap_or("-");
            let answer: String = answer.chars().take(16).collect();
            let gold: String = i.gold.chars().take(6).collect();
            let _ = writeln!(
                out,
                "{:<24} {:<16} {:<6} {:>7} {:>5}",
                i.item_id,
                answer,
                gold,
                if i.correct { "yes" } else { "no" },
                i.metrics.calls
            );
        }
        let _ = writeln!(
            out,
            "\naccuracy {:.2}% ({}/{})  mean calls {:.2}  mean tokens {:.1}  mean wall {:.1} ms",
            self.accuracy, self.correct_count, self.item_count, self.mean_calls, self.mean_tokens, self.mean_wall_ms
        );
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Items run concurrently; 1 runs them one at a time.
    pub threads: usize,
    /// Where per-item traces are written, one `<item_id>.json` each.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: Report,
    /// Per-item traces, in report order.
    pub traces: Vec<RunTrace>,
}

fn file_stem(item_id: &str) -> String {
    item_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Runs the configured pipeline on every item. A failed item is scored
/// incorrect, keeps its partial trace and does not stop the run.
pub fn run_benchmark(
    items: &[BenchItem],
    registry: &Registry,
    cfg: &RunConfig,
    backend: &dyn Backend,
    opts: &BenchOptions,
) -> std::io::Result<BenchRun> {
    let threads = opts.threads.max(1);
    let results: Vec<(ItemResult, RunTrace)> = exec::with_threads(threads, || {
        exec::map(items, threads > 1, |item| {
            let (answer, trace, error) = match run(&item.query, registry, cfg, backend) {
                Ok(out) => (Some(out.answer), out.trace, None),
                Err(fail) => (None, *fail.trace, Some(fail.error.to_string())),
            };
            let correct = answer.as_deref().is_some_and(|a| match_answer(a, item));
            let result = ItemResult {
                item_id: item.item_id.clone(),
                answer,
                gold: item.gold.clone(),
                correct,
                metrics: trace.metrics.clone(),
                error,
            };
            (result, trace)
        })
    });
    if let Some(dir) = &opts.trace_dir {
        std::fs::create_dir_all(dir)?;
        for (r, t) in &results {
            t.save(dir.join(format!("{}.json", file_stem(&r.item_id))))?;
        }
    }
    let mut results = results;
    results.sort_by(|a, b| a.0.item_id.cmp(&b.0.item_id));
    let (items, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(BenchRun {
        report: Report::from_items(items),
        traces,
    })
}
