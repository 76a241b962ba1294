use std::collections::BTreeMap;
use std::path::PathBuf;

use super::{Backend, ChatMessage, CompletionResult, HttpBackend, ScriptedBackend};
use crate::error::BackendError;
use crate::registry::{AgentSpec, Endpoint, Registry};

/// Dispatches each agent to the backend its endpoint names. Script files are
/// loaded once per distinct path.
pub struct RoutingBackend {
    http: Option<HttpBackend>,
    scripted: BTreeMap<PathBuf, ScriptedBackend>,
}

impl RoutingBackend {
    pub fn from_registry(registry: &Registry) -> Result<Self, BackendError> {
        let mut http = None;
        let mut scripted = BTreeMap::new();
        for agent in registry.agents() {
            match &agent.endpoint {
                Endpoint::Http(_) if http.is_none() => http = Some(HttpBackend::from_env()?),
                Endpoint::Http(_) => {}
                Endpoint::Scripted(path) => {
                    if !scripted.contains_key(path) {
                        scripted.insert(path.clone(), ScriptedBackend::from_file(path)?);
                    }
                }
            }
        }
        Ok(Self { http, scripted })
    }

    pub fn scripted(&self) -> impl Iterator<Item = (&PathBuf, &ScriptedBackend)> {
        self.scripted.iter()
    }

    /// Total successful scripted invocations across all script files.
    pub fn scripted_invocations(&self) -> usize {
        self.scripted.values().map(ScriptedBackend::invocation_count).sum()
    }
}

impl Backend for RoutingBackend {
    fn complete(
        &self,
        agent: &AgentSpec,
        messages: &[ChatMessage],
    ) -> Result<CompletionResult, BackendError> {
        match &agent.endpoint {
            Endpoint::Http(_) => self
                .http
                .as_ref()
                .ok_or_else(|| BackendError::Unroutable(agent.endpoint.render()))?
                .complete(agent, messages),
            Endpoint::Scripted(path) => self
                .scripted
                .get(path)
                .ok_or_else(|| BackendError::Unroutable(agent.endpoint.render()))?
                .complete(agent, messages),
        }
    }
}
