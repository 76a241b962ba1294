//! Agent registry: model cards, endpoints and generation parameters.
//!
//! A registry is loaded once from a JSON document and is immutable afterwards.
//! Its agent order defines the index space `[0, N-1]` used by the node
//! selection prompt.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::ChatMessage;
use crate::error::{PromptError, RegistryError};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// Structured summary of what an agent is good at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model_id: String,
    pub domain: String,
    pub task_specialization: String,
    pub parameter_size: String,
    pub special_features: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    /// Base URL of an OpenAI-compatible server; `/chat/completions` is appended.
    Http(String),
    /// Script file replayed by the scripted backend.
    Scripted(PathBuf),
}

impl Endpoint {
    pub const SCRIPTED_PREFIX: &'static str = "scripted:";

    /// Parses `https://...`, `http://...` or `scripted:<path>`. Relative script
    /// paths are resolved against `base_dir`.
    pub fn parse(raw: &str, base_dir: Option<&Path>) -> Result<Self, String> {
        if let Some(path) = raw.strip_prefix(Self::SCRIPTED_PREFIX) {
            if path.is_empty() {
                return Err("scripted endpoint needs a path".into());
            }
            let path = PathBuf::from(path);
            let path = match base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path,
            };
            Ok(Endpoint::Scripted(path))
        } else if raw.starts_with("https://") || raw.starts_with("http://") {
            Ok(Endpoint::Http(raw.trim_end_matches('/').to_string()))
        } else {
            Err(format!(
                "`{raw}` is neither an http(s) URL nor a `scripted:<path>` tag"
            ))
        }
    }

    pub fn render(&self) -> String {
        match self {
            Endpoint::Http(url) => url.clone(),
            Endpoint::Scripted(path) => format!("{}{}", Self::SCRIPTED_PREFIX, path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub card: ModelCard,
    pub endpoint: Endpoint,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    agents: Vec<AgentSpec>,
    meta_index: usize,
}

impl Registry {
    /// Validates the agent list and resolves the meta agent. Without an explicit
    /// meta agent the first general-domain agent is used, else agent 0.
    pub fn new(agents: Vec<AgentSpec>, meta_agent: Option<&str>) -> Result<Self, RegistryError> {
        if agents.is_empty() {
            return Err(RegistryError::malformed("agents", "must be non-empty"));
        }
        let mut seen = HashSet::new();
        for (i, agent) in agents.iter().enumerate() {
            if agent.agent_id.trim().is_empty() {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].agent_id"),
                    "must be non-empty",
                ));
            }
            if !seen.insert(agent.agent_id.as_str()) {
                return Err(RegistryError::DuplicateAgentId(agent.agent_id.clone()));
            }
            if agent.card.model_id.trim().is_empty() {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].model"),
                    "must be non-empty",
                ));
            }
            if agent.card.domain.trim().is_empty() {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].model_card.domain"),
                    "must be non-empty",
                ));
            }
            if agent.card.task_specialization.trim().is_empty() {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].model_card.task_specialization"),
                    "must be non-empty",
                ));
            }
            if agent.params.temperature.is_nan() || agent.params.temperature < 0.0 {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].temperature"),
                    "must be >= 0",
                ));
            }
            if agent.params.max_tokens == 0 {
                return Err(RegistryError::malformed(
                    format!("agents[{i}].max_tokens"),
                    "must be positive",
                ));
            }
        }
        let meta_index = match meta_agent {
            Some(id) => agents
                .iter()
                .position(|a| a.agent_id == id)
                .ok_or_else(|| {
                    RegistryError::malformed("meta_agent", format!("`{id}` is not a registry agent"))
                })?,
            None => agents
                .iter()
                .position(|a| a.card.domain.to_lowercase().contains("general"))
                .unwrap_or(0),
        };
        Ok(Self { agents, meta_index })
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.agents.len() - 1
    }

    pub fn get(&self, index: usize) -> Option<&AgentSpec> {
        self.agents.get(index)
    }

    pub fn index_of(&self, agent_id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == agent_id)
    }

    pub fn agent(&self, agent_id: &str) -> Result<&AgentSpec, RegistryError> {
        self.agents
            .iter()
            .find(|a| a.agent_id == agent_id)
            .ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))
    }

    /// General-purpose agent used for selection, mean pooling and format fallback.
    pub fn meta_agent(&self) -> &AgentSpec {
        &self.agents[self.meta_index]
    }

    pub fn meta_index(&self) -> usize {
        self.meta_index
    }

    pub fn with_meta_agent(mut self, agent_id: &str) -> Result<Self, RegistryError> {
        self.meta_index = self
            .index_of(agent_id)
            .ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))?;
        Ok(self)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta_agent: Option<String>,
    agents: Vec<AgentDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentDoc {
    agent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    model_card: CardDoc,
    endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CardDoc {
    domain: String,
    task_specialization: String,
    #[serde(default)]
    parameter_size: String,
    #[serde(default)]
    special_features: String,
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(RegistryError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_registry(&text, path.parent())
}

/// Parses a registry document; `base_dir` anchors relative script paths.
pub fn parse_registry(text: &str, base_dir: Option<&Path>) -> Result<Registry, RegistryError> {
    let doc: RegistryDoc = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
            .unwrap_or("document")
            .to_string();
        RegistryError::MalformedDocument { field, reason: msg }
    })?;
    let mut agents = Vec::with_capacity(doc.agents.len());
    for (i, a) in doc.agents.into_iter().enumerate() {
        let endpoint = Endpoint::parse(&a.endpoint, base_dir)
            .map_err(|reason| RegistryError::malformed(format!("agents[{i}].endpoint"), reason))?;
        agents.push(AgentSpec {
            card: ModelCard {
                model_id: a.model.unwrap_or_else(|| a.agent_id.clone()),
                domain: a.model_card.domain,
                task_specialization: a.model_card.task_specialization,
                parameter_size: a.model_card.parameter_size,
                special_features: a.model_card.special_features,
            },
            agent_id: a.agent_id,
            endpoint,
            params: GenerationParams {
                temperature: a.temperature.unwrap_or(DEFAULT_TEMPERATURE),
                max_tokens: a.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
            },
        });
    }
    Registry::new(agents, doc.meta_agent.as_deref())
}

pub fn registry_to_json(registry: &Registry) -> String {
    let doc = RegistryDoc {
        meta_agent: Some(registry.meta_agent().agent_id.clone()),
        agents: registry
            .agents()
            .iter()
            .map(|a| AgentDoc {
                agent_id: a.agent_id.clone(),
                model: Some(a.card.model_id.clone()),
                model_card: CardDoc {
                    domain: a.card.domain.clone(),
                    task_specialization: a.card.task_specialization.clone(),
                    parameter_size: a.card.parameter_size.clone(),
                    special_features: a.card.special_features.clone(),
                },
                endpoint: a.endpoint.render(),
                temperature: Some(a.params.temperature),
                max_tokens: Some(a.params.max_tokens),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("registry document serializes")
}

pub fn save_registry(registry: &Registry, path: impl AsRef<Path>) -> Result<(), RegistryError> {
    std::fs::write(path, registry_to_json(registry))?;
    Ok(())
}

/// Prompt asking a model to summarize a README into the four card fields.
pub fn build_card_extraction_prompt(readme_text: &str) -> Result<Vec<ChatMessage>, PromptError> {
    if readme_text.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    let user = format!(
        "You are given the README file of a language model:\n\
         \n\
         {readme_text}\n\
         \n\
         Please extract and summarize the model's key characteristics clearly and concisely in the following structured format:\n\
         \n\
         1. **Domain**: The primary domain or application area the model is designed for (e.g., general-purpose, biomedical, finance, coding, math, etc.).\n\
         \n\
         2. **Task Specialization**: Describe the task types the model is designed for or excels at. Be as specific as possible, including the domain context of each task (e.g., biomedical question answering, clinical decision support, financial sentiment classification, code generation). Do not include performance metrics, benchmark names, or evaluation results.\n\
         \n\
         3. **Parameter Size**: The number of parameters in the model (approximate if not explicitly stated).\n\
         \n\
         4. **Special Features**: Any distinguishing aspects such as fine-tuning datasets (if applicable).\n\
         \n\
         Your summary will later be used to compare multiple models for selection purposes. Return your answer in bullet-point format, using the exact field names shown above. Keep it concise but specific enough for model comparison.\n\
         \n\
         Answer:"
    );
    Ok(vec![
        ChatMessage::system("You are an expert in analyzing and summarizing AI model documentation."),
        ChatMessage::user(user),
    ])
}

/// One line per agent: its index, model id and card fields.
pub fn format_model_descriptions(registry: &Registry) -> String {
    let mut out = String::new();
    for (i, agent) in registry.agents().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let card = &agent.card;
        let _ = write!(
            out,
            "{i}: {} — Domain: {} | Task: {} | Size: {} | Features: {}",
            card.model_id,
            card.domain,
            card.task_specialization,
            card.parameter_size,
            card.special_features
        );
    }
    out
}
