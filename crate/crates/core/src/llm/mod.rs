//! Language-model access: chat completion and text embedding behind one trait,
//! with a live HTTP backend and a deterministic scripted backend.

mod embed;
mod live;
pub mod prompts;
mod scripted;
mod verdict;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{normalize, trigram_embedding, TRIGRAM_DIM};
pub use live::LiveModel;
pub use scripted::{detect_intent, Builtin, EmbeddingEntry, Intent, Matcher, Response, Rule, ScriptedModel, ScriptedRules};
pub use verdict::{parse_verdict, AlignmentWinner, Step, StructuredVerdict, VerdictError};

/// Fuzzy-memory threshold for embeddings from a real embedding model.
pub const LIVE_FUZZY_THRESHOLD: f64 = 0.85;
/// Fuzzy-memory threshold for the hashed trigram fallback.
pub const HASHED_FUZZY_THRESHOLD: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backend: Backend,
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: u64,
    pub max_retries: u32,
    /// JSONL file receiving every live request and response, key redacted.
    pub audit_path: Option<PathBuf>,
    /// Scripted rules file; the built-in rules are used when unset.
    pub rules_path: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Scripted,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            temperature: 0.3,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 60,
            max_retries: 3,
            audit_path: None,
            rules_path: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.timeout_s == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Timeout,
    Auth,
    RateLimit,
    Transport,
    Protocol,
    Config,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl LlmError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            LlmError::Timeout(_) => ErrorCategory::Timeout,
            LlmError::Auth(_) => ErrorCategory::Auth,
            LlmError::RateLimit(_) => ErrorCategory::RateLimit,
            LlmError::Transport(_) => ErrorCategory::Transport,
            LlmError::Protocol(_) => ErrorCategory::Protocol,
            LlmError::Config(_) => ErrorCategory::Config,
        }
    }

    /// Worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Timeout(_) | LlmError::RateLimit(_) | LlmError::Transport(_))
    }
}

pub trait LanguageModel: Send + Sync {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, LlmError>;
    /// Unit-norm embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
    /// Default fuzzy-memory threshold suited to this backend's embeddings.
    fn fuzzy_threshold(&self) -> f64;
    fn name(&self) -> String;
}

/// Builds the backend selected by `cfg`.
pub fn connect(cfg: &ModelConfig) -> Result<Box<dyn LanguageModel>, LlmError> {
    cfg.validate()?;
    match cfg.backend {
        Backend::Live => Ok(Box::new(LiveModel::new(cfg.clone())?)),
        Backend::Scripted => {
            let rules = match &cfg.rules_path {
                Some(p) => ScriptedRules::from_file(p)?,
                None => ScriptedRules::builtin(),
            };
            Ok(Box::new(ScriptedModel::new(rules)?))
        }
    }
}
