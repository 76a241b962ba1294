//! Initial responses and peer scoring.

use std::sync::OnceLock;

use regex::Regex;

use crate::backend::{
    apply_fallback, generate_structured, CallKey, ChatMessage, FallbackPolicy, Session, Stage,
};
use crate::error::{PipelineError, PromptError};
use crate::exec;
use crate::graph::ScoreMatrix;
use crate::node_sampling::Selection;
use crate::query::{build_initial_prompt, Query};
use crate::registry::{AgentSpec, Registry};
use crate::response::{Phase, ResponseRecord};

pub fn node_label(node_id: usize) -> String {
    format!("Model {node_id}")
}

/// One initial generation per selected node, with format retries and
/// general-agent substitution. Records come back in node order.
pub fn collect_initial_responses(
    session: &Session<'_>,
    selection: &Selection,
    query: &Query,
    registry: &Registry,
    policy: &FallbackPolicy,
    parallel: bool,
) -> Result<Vec<ResponseRecord>, PipelineError> {
    let prompt = build_initial_prompt(query);
    let outcomes = exec::map(&selection.node_instances, parallel, |node| {
        let agent = &registry.agents()[node.agent_index];
        generate_structured(session, Stage::Initial, node.node_id, agent, &prompt, Phase::Initial, policy, 0)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    apply_fallback(session, outcomes, registry, Stage::Initial, policy, parallel)
}

/// Example score list with `n` descending two-decimal entries summing to 1.
fn example_scores(n: usize) -> String {
    let total_weight = n * (n + 1) / 2;
    let mut hundredths: Vec<usize> = (0..n)
        .map(|i| ((100 * (n - i)) as f64 / total_weight as f64).round() as usize)
        .collect();
    let head: usize = hundredths[..n - 1].iter().sum();
    hundredths[n - 1] = 100usize.saturating_sub(head);
    hundredths
        .iter()
        .map(|h| format!("{}.{:02}", h / 100, h % 100))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Scoring prompt shown to one node. `others` are (label, response text)
/// pairs for every other node, in node order.
pub fn build_scoring_prompt(query: &Query, others: &[(String, String)]) -> Result<Vec<ChatMessage>, PromptError> {
    if others.is_empty() {
        return Err(PromptError::TooFewPeers(others.len() + 1));
    }
    let n = others.len();
    let labels = others.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(", ");
    let responses = others
        .iter()
        .map(|(label, text)| format!("{label}: {text}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(vec![ChatMessage::user(format!(
        "Score the following {n} model responses to this question.\n\
         \n\
         Question: {question}\n\
         \n\
         Responses (in order: {labels}):\n\
         \n\
         {responses}\n\
         \n\
         Assign a score to each response based on correctness, coherence, and relevance. \
         Scores must sum to exactly 1.0. Output only a comma-separated list of {n} scores.\n\
         \n\
         Example: {example}\n\
         \n\
         Answer:",
        question = query.question,
        example = example_scores(n),
    ))])
}

/// First `expected` numbers in `text`, negatives clamped to 0, renormalized to
/// sum 1. `None` when fewer numbers are present or they sum to 0.
pub fn parse_scores(text: &str, expected: usize) -> Option<Vec<f64>> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    static LABEL: OnceLock<Regex> = OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"-?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").unwrap());
    // "Model 2: 0.8" style labels would otherwise contribute their index.
    let label = LABEL.get_or_init(|| Regex::new(r"(?i)\b(?:model|response|agent)\s*#?\d+\b").unwrap());
    let text = label.replace_all(text, " ");
    let values: Vec<f64> = re
        .find_iter(&text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .take(expected)
        .map(|v| v.max(0.0))
        .collect();
    if expected == 0 || values.len() < expected {
        return None;
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    Some(values.into_iter().map(|v| v / sum).collect())
}

pub fn uniform_scores(expected: usize) -> Vec<f64> {
    vec![1.0 / expected as f64; expected]
}

/// One scoring call per node (plus `retries` on unusable output). Row i holds
/// node i's normalized scores; the diagonal is zero.
pub fn build_score_matrix(
    session: &Session<'_>,
    query: &Query,
    agents: &[&AgentSpec],
    responses: &[ResponseRecord],
    retries: u32,
    parallel: bool,
) -> Result<ScoreMatrix, PipelineError> {
    let n = responses.len();
    if n < 2 {
        return Err(PromptError::TooFewPeers(n).into());
    }
    let scorers: Vec<usize> = (0..n).collect();
    let rows = exec::map(&scorers, parallel, |&i| -> Result<Vec<f64>, PipelineError> {
        let others: Vec<(String, String)> = responses
            .iter()
            .filter(|r| r.node_id != i)
            .map(|r| (node_label(r.node_id), r.message_text()))
            .collect();
        let prompt = build_scoring_prompt(query, &others)?;
        for attempt in 0..=retries {
            let out = session.call(CallKey::new(Stage::Scoring, i).attempt(attempt), agents[i], prompt.clone())?;
            if let Some(row) = parse_scores(&out.text, n - 1) {
                return Ok(row);
            }
            session.warn(
                Stage::Scoring,
                Some(i),
                format!("unusable scores {:?} (attempt {attempt})", out.text),
            );
        }
        session.warn(Stage::Scoring, Some(i), "falling back to uniform scores");
        Ok(uniform_scores(n - 1))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreMatrix::from_peer_rows(&rows).expect("normalized rows form a valid matrix"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptEntry, ScriptedBackend};
    use crate::query::TaskKind;
    use crate::registry::{Endpoint, GenerationParams, ModelCard};
    use approx::assert_abs_diff_eq;

    fn agent(id: &str) -> AgentSpec {
        AgentSpec {
            agent_id: id.into(),
            card: ModelCard {
                model_id: id.into(),
                domain: "general".into(),
                task_specialization: "qa".into(),
                parameter_size: "7B".into(),
                special_features: String::new(),
            },
            endpoint: Endpoint::Scripted("s.json".into()),
            params: GenerationParams::default(),
        }
    }

    fn records(n: usize) -> Vec<ResponseRecord> {
        (0..n)
            .map(|i| {
                ResponseRecord::from_completion(
                    i,
                    &format!("a{i}"),
                    Phase::Initial,
                    format!(r#"{{"reasoning":"r{i}","answer":"{}"}}"#, ["A", "B", "C", "D"][i % 4]),
                )
            })
            .collect()
    }

    fn q() -> Query {
        Query::new("Q?", TaskKind::MultipleChoice)
    }

    #[test]
    fn scoring_prompt_shape() {
        let others = vec![("Model 1".to_string(), "x".to_string()), ("Model 2".to_string(), "y".to_string())];
        let p = build_scoring_prompt(&q(), &others).unwrap();
        let text = &p[0].content;
        assert!(text.starts_with("Score the following 2 model responses to this question."));
        assert!(text.contains("Responses (in order: Model 1, Model 2):\n\nModel 1: x\n\nModel 2: y\n\n"));
        assert!(text.contains("comma-separated list of 2 scores"));
        assert!(text.contains("correctness, coherence, and relevance"));
        assert!(text.contains("Example: 0.67, 0.33"));

        let one = build_scoring_prompt(&q(), &others[..1]).unwrap();
        assert!(one[0].content.contains("list of 1 scores"));
        assert!(one[0].content.contains("Example: 1.00"));
        assert_eq!(build_scoring_prompt(&q(), &[]), Err(PromptError::TooFewPeers(1)));
    }

    #[test]
    fn example_scores_sum_to_one() {
        for n in 1..10 {
            let total: f64 = example_scores(n).split(", ").map(|s| s.parse::<f64>().unwrap()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
        assert_eq!(example_scores(3), "0.50, 0.33, 0.17");
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_scores("0.7, 0.3", 2), Some(vec![0.7, 0.3]));
        let s = parse_scores("0.6, 0.6", 2).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-12);
        assert_eq!(parse_scores("no idea", 2), None);
        assert_eq!(parse_scores("-0.5, 1.0", 2), Some(vec![0.0, 1.0]));
        assert_eq!(parse_scores("0, 0", 2), None);
        assert_eq!(parse_scores("0.5", 2), None);
        assert_eq!(parse_scores("0.2, 0.3, 0.5, 0.9", 3), Some(vec![0.2, 0.3, 0.5]));
        assert_eq!(parse_scores("Model 1: 0.2, Model 2: 0.8", 2), Some(vec![0.2, 0.8]));
        assert_eq!(parse_scores("Response #3 = 0.5\nresponse 1 = 0.5", 2), Some(vec![0.5, 0.5]));
    }

    #[test]
    fn matrix_from_scripted_scorers() {
        let agents = [agent("a0"), agent("a1"), agent("a2")];
        let refs: Vec<&AgentSpec> = agents.iter().collect();
        let backend = ScriptedBackend::new([
            ScriptEntry::seq("a0", 0, "0.7, 0.3"),
            ScriptEntry::seq("a1", 0, "0.6, 0.4"),
            ScriptEntry::seq("a2", 0, "0.5, 0.5"),
        ])
        .unwrap();
        let session = Session::new(&backend);
        let m = build_score_matrix(&session, &q(), &refs, &records(3), 1, false).unwrap();
        assert_eq!(
            m.entries(),
            &[vec![0.0, 0.7, 0.3], vec![0.6, 0.0, 0.4], vec![0.5, 0.5, 0.0]]
        );
        assert_eq!(session.call_count(), 3);
    }

    #[test]
    fn unusable_scores_retry_then_uniform() {
        let agents = [agent("a0"), agent("a1")];
        let refs: Vec<&AgentSpec> = agents.iter().collect();
        let backend = ScriptedBackend::new([
            ScriptEntry::seq("a0", 0, "no idea"),
            ScriptEntry::seq("a0", 1, "still no idea"),
            ScriptEntry::seq("a1", 0, "banana"),
            ScriptEntry::seq("a1", 1, "1.0"),
        ])
        .unwrap();
        let session = Session::new(&backend);
        let m = build_score_matrix(&session, &q(), &refs, &records(2), 1, false).unwrap();
        assert_eq!(m.entries(), &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(session.call_count(), 4);
        let (_, warnings) = session.finish();
        assert!(warnings.iter().any(|w| w.message.contains("uniform")));
    }

    #[test]
    fn scorer_never_sees_itself() {
        let agents = [agent("a0"), agent("a1"), agent("a2")];
        let refs: Vec<&AgentSpec> = agents.iter().collect();
        let backend = ScriptedBackend::new([
            ScriptEntry::seq("a0", 0, "0.5, 0.5"),
            ScriptEntry::seq("a1", 0, "0.5, 0.5"),
            ScriptEntry::seq("a2", 0, "0.5, 0.5"),
        ])
        .unwrap();
        let session = Session::new(&backend);
        build_score_matrix(&session, &q(), &refs, &records(3), 0, true).unwrap();
        let (calls, _) = session.finish();
        for call in calls {
            let me = call.key.node as usize;
            let text = &call.messages[0].content;
            assert!(!text.contains(&format!("Model {me}:")));
            assert!(!text.contains(&format!("r{me}\n")));
        }
    }
}
