use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("MissingFile: {0}")]
    MissingFile(PathBuf),
    #[error("MalformedDocument: field `{field}`: {reason}")]
    MalformedDocument { field: String, reason: String },
    #[error("DuplicateAgentId: {0}")]
    DuplicateAgentId(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RegistryError {
    pub(crate) fn malformed(field: impl Into<String>, reason: impl Into<String>) -> Self {
        RegistryError::MalformedDocument {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("EmptyInput")]
    EmptyInput,
    #[error("KOutOfRange: k={k} but the registry holds {n} agents")]
    KOutOfRange { k: usize, n: usize },
    #[error("TooFewPeers: scoring needs at least 2 nodes, got {0}")]
    TooFewPeers(usize),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("TransportError: {0}")]
    Transport(String),
    #[error("ScriptMiss: agent `{agent_id}`, prompt hash {hash}")]
    ScriptMiss { agent_id: String, hash: String },
    #[error("invalid script: {0}")]
    Script(String),
    #[error("no backend can serve endpoint `{0}`")]
    Unroutable(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("ParseFailed: {text:?}")]
pub struct ParseFailed {
    pub text: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("FallbackExhausted: general agent `{agent_id}` produced no parseable response for node {node_id}")]
    FallbackExhausted { node_id: usize, agent_id: String },
    #[error("invalid run configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("MissingFile: {0}")]
    MissingFile(PathBuf),
    #[error("MalformedRecord: line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("MissingFile: {0}")]
    MissingFile(PathBuf),
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
