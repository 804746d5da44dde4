//! Judge-model capabilities behind one interface.
//!
//! Every model call in the engine goes through one of the capability traits
//! below. Two implementations ship: [`HttpBackend`], which renders the
//! prompt templates and talks to any chat-completion endpoint, and
//! [`MockBackend`], a pure rule table used by tests and offline runs.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Claim, Observation, TestBasis, VerifiedDefect};
use crate::retriever::StateMatcher;
use crate::verifiers::Transition;

pub mod http;
pub mod mock;
pub mod prompt;
pub mod schema;
pub mod structured;
pub mod transport;
pub mod wire;

pub use http::HttpBackend;
pub use mock::{DisplayRule, InteractionRule, MockBackend, MockRuleTable, TransitionPredicate};
pub use prompt::{render_prompt, ContentPart, Message, PromptContext, PromptError, PromptTemplate, Role, TemplateId};
pub use schema::{
    ConsistencyAnswer, DisplayDefect, DisplayFinding, InteractionDefect, InteractionFinding,
    StructuredOutput, UnifiedDefect, UnifiedFinding,
};
pub use structured::{complete_structured, parse_structured};
pub use transport::{CassetteRecord, CassetteTransport, RecordingTransport, ReqwestTransport, Transport, TransportError};

pub const ENV_API_KEY: &str = "JUDGE_API_KEY";
pub const ENV_BASE_URL: &str = "JUDGE_BASE_URL";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("judge backend failed after {attempts} attempt(s): {last}")]
    Failure { attempts: usize, last: String },
    #[error("judge backend rejected credentials: {0}")]
    Auth(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cannot attach image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_budget")]
    pub concurrency_budget: usize,
    /// Replay responses from this cassette instead of the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
    /// Append live exchanges to this cassette.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_rules: Option<MockRuleTable>,
}

fn default_key_env() -> String {
    ENV_API_KEY.to_string()
}
fn default_retries() -> u32 {
    2
}
fn default_timeout() -> f64 {
    60.0
}
fn default_budget() -> usize {
    8
}

impl BackendConfig {
    /// Sampling temperature; pinned for reproducible judgments.
    pub const TEMPERATURE: f64 = 0.0;

    pub fn mock(rules: MockRuleTable) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: None,
            api_key_env: default_key_env(),
            max_retries: default_retries(),
            request_timeout_secs: default_timeout(),
            concurrency_budget: default_budget(),
            cassette: None,
            record: None,
            mock_rules: Some(rules),
        }
    }

    pub fn http(base_url: &str, model_name: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            base_url: Some(base_url.to_string()),
            model_name: Some(model_name.to_string()),
            mock_rules: None,
            ..Self::mock(MockRuleTable::default())
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Http => {
                if self.base_url.as_deref().is_none_or(str::is_empty) && self.cassette.is_none() {
                    return Err(BackendError::Config("http backend requires base_url".into()));
                }
                if self.model_name.as_deref().is_none_or(str::is_empty) {
                    return Err(BackendError::Config("http backend requires model_name".into()));
                }
            }
            BackendKind::Mock => {
                if self.mock_rules.is_none() {
                    return Err(BackendError::Config("mock backend requires a rule table".into()));
                }
            }
        }
        if self.concurrency_budget == 0 {
            return Err(BackendError::Config("concurrency_budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Input of one interaction judgment. `history` already contains
/// `transition` as its last element.
#[derive(Debug, Clone, Copy)]
pub struct InteractionQuery<'a> {
    pub task: &'a str,
    pub basis: Option<&'a TestBasis>,
    pub history: &'a [Transition],
    pub transition: &'a Transition,
}

#[async_trait]
pub trait DisplayJudge: Send + Sync {
    async fn verify_display_state(&self, observation: &Observation) -> Result<DisplayFinding, BackendError>;
}

#[async_trait]
pub trait InteractionJudge: Send + Sync {
    async fn verify_interaction_transition(
        &self,
        query: InteractionQuery<'_>,
    ) -> Result<InteractionFinding, BackendError>;
}

/// Merged display-and-interaction judgment used by the single-verifier
/// ablation.
#[async_trait]
pub trait UnifiedJudge: Send + Sync {
    async fn verify_unified(&self, query: InteractionQuery<'_>) -> Result<UnifiedFinding, BackendError>;
}

#[async_trait]
pub trait ConsistencyJudge: Send + Sync {
    async fn judge_consistency(
        &self,
        claim: &Claim,
        defect: &VerifiedDefect,
    ) -> Result<ConsistencyAnswer, BackendError>;
}

/// Every judge capability.
pub trait JudgeBackend: StateMatcher + DisplayJudge + InteractionJudge + UnifiedJudge + ConsistencyJudge {
    /// Largest number of judgments worth issuing concurrently.
    fn concurrency_budget(&self) -> usize {
        1
    }
}

/// Builds the backend described by `config`, resolving environment
/// indirections.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn JudgeBackend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Mock => Ok(Arc::new(MockBackend::new(
            config.mock_rules.clone().expect("validated"),
        ))),
        BackendKind::Http => {
            let transport: Arc<dyn Transport> = match &config.cassette {
                Some(path) => Arc::new(
                    CassetteTransport::load(path).map_err(|e| BackendError::Config(e.to_string()))?,
                ),
                None => {
                    let base = config.base_url.as_deref().expect("validated");
                    let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
                    let live = ReqwestTransport::new(base, key);
                    match &config.record {
                        Some(path) => Arc::new(
                            RecordingTransport::new(live, path)
                                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?,
                        ),
                        None => Arc::new(live),
                    }
                }
            };
            Ok(Arc::new(HttpBackend::new(config.clone(), transport)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(BackendConfig::mock(MockRuleTable::default()).validate().is_ok());
        let mut c = BackendConfig::http("http://x", "m");
        assert!(c.validate().is_ok());
        c.model_name = None;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::http("", "m");
        assert!(c.validate().is_err());
        c.cassette = Some("x.jsonl".into());
        assert!(c.validate().is_ok());
        let mut m = BackendConfig::mock(MockRuleTable::default());
        m.mock_rules = None;
        assert!(m.validate().is_err());
    }
}
