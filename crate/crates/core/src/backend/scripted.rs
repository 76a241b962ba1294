//! Deterministic replay backend and its recording counterpart.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, ChatMessage, CompletionResult, Usage};
use crate::error::BackendError;
use crate::registry::AgentSpec;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMatch {
    /// Exact prompt: SHA-256 of the concatenated message contents.
    Hash(String),
    /// The agent's n-th call (0-based).
    Seq(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub agent_id: String,
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    pub response: String,
}

impl ScriptEntry {
    pub fn hash(agent_id: impl Into<String>, messages: &[ChatMessage], response: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            matcher: ScriptMatch::Hash(prompt_hash(messages)),
            response: response.into(),
        }
    }

    pub fn seq(agent_id: impl Into<String>, n: u64, response: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            matcher: ScriptMatch::Seq(n),
            response: response.into(),
        }
    }
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<ScriptEntry>, BackendError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
}

pub fn save_script(entries: &[ScriptEntry], path: impl AsRef<Path>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(entries).expect("script serializes");
    std::fs::write(path, text)
}

/// One successful scripted completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation {
    pub agent_id: String,
    pub hash: String,
    pub response: String,
}

/// Replays authored responses. Exact-hash entries take priority over
/// sequence entries.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    exact: HashMap<(String, String), String>,
    sequence: HashMap<(String, u64), String>,
    counters: Mutex<HashMap<String, u64>>,
    log: Mutex<Vec<Invocation>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, BackendError> {
        let mut backend = Self::default();
        for entry in entries {
            let (slot, existing) = match entry.matcher {
                ScriptMatch::Hash(hash) => {
                    let key = (entry.agent_id.clone(), hash);
                    let prev = backend.exact.insert(key.clone(), entry.response.clone());
                    (format!("hash {}", key.1), prev)
                }
                ScriptMatch::Seq(n) => {
                    let prev = backend
                        .sequence
                        .insert((entry.agent_id.clone(), n), entry.response.clone());
                    (format!("seq {n}"), prev)
                }
            };
            if let Some(prev) = existing {
                if prev != entry.response {
                    return Err(BackendError::Script(format!(
                        "conflicting responses for agent `{}` at {slot}",
                        entry.agent_id
                    )));
                }
            }
        }
        Ok(backend)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Self::new(load_script(path)?)
    }

    pub fn invocations(&self) -> Vec<Invocation> {
        self.log.lock().expect("invocation log poisoned").clone()
    }

    pub fn invocation_count(&self) -> usize {
        self.log.lock().expect("invocation log poisoned").len()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("invocation log poisoned").clear();
        self.counters.lock().expect("counters poisoned").clear();
    }
}

impl Backend for ScriptedBackend {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        let hash = prompt_hash(messages);
        let n = {
            let mut counters = self.counters.lock().expect("counters poisoned");
            let counter = counters.entry(agent.agent_id.clone()).or_insert(0);
            let n = *counter;
            *counter += 1;
            n
        };
        let response = self
            .exact
            .get(&(agent.agent_id.clone(), hash.clone()))
            .or_else(|| self.sequence.get(&(agent.agent_id.clone(), n)))
            .cloned()
            .ok_or_else(|| BackendError::ScriptMiss {
                agent_id: agent.agent_id.clone(),
                hash: hash.clone(),
            })?;
        self.log.lock().expect("invocation log poisoned").push(Invocation {
            agent_id: agent.agent_id.clone(),
            hash,
            response: response.clone(),
        });
        Ok(CompletionResult {
            usage: Usage::heuristic(messages, &response),
            text: response,
            latency_ms: 0.0,
        })
    }
}

/// Forwards to an inner backend and records every exchange as an exact-hash
/// script entry.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<(String, String), String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded entries sorted by (agent_id, hash).
    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.recorded
            .lock()
            .expect("recording poisoned")
            .iter()
            .map(|((agent_id, hash), response)| ScriptEntry {
                agent_id: agent_id.clone(),
                matcher: ScriptMatch::Hash(hash.clone()),
                response: response.clone(),
            })
            .collect()
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        let result = self.inner.complete(agent, messages)?;
        self.recorded
            .lock()
            .expect("recording poisoned")
            .insert((agent.agent_id.clone(), prompt_hash(messages)), result.text.clone());
        Ok(result)
    }
}

/// Adds a fixed sleep to every call, for exercising concurrency.
pub struct SimulatedLatency<B> {
    inner: B,
    delay: Duration,
}

impl<B: Backend> SimulatedLatency<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<B: Backend> Backend for SimulatedLatency<B> {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        std::thread::sleep(self.delay);
        let mut result = self.inner.complete(agent, messages)?;
        result.latency_ms = self.delay.as_secs_f64() * 1000.0;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::UsageSource;
    use crate::registry::{Endpoint, GenerationParams, ModelCard};

    pub(crate) fn agent(id: &str) -> AgentSpec {
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

    #[test]
    fn exact_entry_replays_with_zero_latency() {
        let msgs = vec![ChatMessage::user("What is 2+2?")];
        let backend = ScriptedBackend::new([ScriptEntry::hash("a1", &msgs, "4")]).unwrap();
        let out = backend.complete(&agent("a1"), &msgs).unwrap();
        assert_eq!(out.text, "4");
        assert_eq!(out.latency_ms, 0.0);
        assert_eq!(out.usage.usage_source, UsageSource::Heuristic);
        assert_eq!(backend.invocation_count(), 1);
    }

    #[test]
    fn unknown_prompt_is_a_miss() {
        let backend = ScriptedBackend::new([ScriptEntry::hash(
            "a1",
            &[ChatMessage::user("known")],
            "x",
        )])
        .unwrap();
        let err = backend
            .complete(&agent("a1"), &[ChatMessage::user("unknown")])
            .unwrap_err();
        assert!(matches!(err, BackendError::ScriptMiss { agent_id, .. } if agent_id == "a1"));
        // same prompt, other agent
        assert!(backend
            .complete(&agent("a2"), &[ChatMessage::user("known")])
            .is_err());
        assert_eq!(backend.invocation_count(), 0);
    }

    #[test]
    fn sequence_mode_counts_per_agent() {
        let backend = ScriptedBackend::new([
            ScriptEntry::seq("a", 0, "first"),
            ScriptEntry::seq("a", 1, "second"),
            ScriptEntry::seq("b", 0, "b-first"),
        ])
        .unwrap();
        let m = [ChatMessage::user("anything")];
        assert_eq!(backend.complete(&agent("a"), &m).unwrap().text, "first");
        assert_eq!(backend.complete(&agent("b"), &m).unwrap().text, "b-first");
        assert_eq!(backend.complete(&agent("a"), &m).unwrap().text, "second");
        assert!(backend.complete(&agent("a"), &m).is_err());
    }

    #[test]
    fn conflicting_entries_are_rejected() {
        let m = [ChatMessage::user("q")];
        assert!(ScriptedBackend::new([ScriptEntry::hash("a", &m, "x"), ScriptEntry::hash("a", &m, "y")]).is_err());
        assert!(ScriptedBackend::new([ScriptEntry::hash("a", &m, "x"), ScriptEntry::hash("a", &m, "x")]).is_ok());
    }

    #[test]
    fn script_file_schema() {
        let json = r#"[{"agent_id": "a", "match": {"seq": 0}, "response": "r0"},
                       {"agent_id": "a", "match": {"hash": "abc"}, "response": "r1"}]"#;
        let entries: Vec<ScriptEntry> = serde_json::from_str(json).unwrap();
        assert_eq!(entries[0], ScriptEntry::seq("a", 0, "r0"));
        assert_eq!(entries[1].matcher, ScriptMatch::Hash("abc".into()));
        let back = serde_json::to_string(&entries[0]).unwrap();
        assert_eq!(back, r#"{"agent_id":"a","match":{"seq":0},"response":"r0"}"#);
    }

    #[test]
    fn recording_then_replay_is_identical() {
        let source = ScriptedBackend::new([ScriptEntry::seq("a", 0, "hello"), ScriptEntry::seq("a", 1, "again")]).unwrap();
        let recorder = RecordingBackend::new(source);
        let m1 = [ChatMessage::user("one")];
        let m2 = [ChatMessage::user("two")];
        recorder.complete(&agent("a"), &m1).unwrap();
        recorder.complete(&agent("a"), &m2).unwrap();
        let replay = ScriptedBackend::new(recorder.entries()).unwrap();
        assert_eq!(replay.complete(&agent("a"), &m2).unwrap().text, "again");
        assert_eq!(replay.complete(&agent("a"), &m1).unwrap().text, "hello");
    }
}
