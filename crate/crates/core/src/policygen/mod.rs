//! Policy generation: scene descriptors, system message and prompt assembly,
//! instruction directness, and the interchangeable generator backends.

mod lexicon;
mod prompt;
mod remote;
mod rule;
mod scene;

use serde::{Deserialize, Serialize};

pub use lexicon::{classify_directness, DirectnessLevel, FeedbackSignal, Lexicon};
pub use prompt::{build_system_message, PromptBundle, SystemMessage, DEFAULT_PROMPT_BUDGET};
pub use remote::{RemoteBackend, RemoteClientConfig, ENV_KEY, ENV_MODEL, ENV_URL};
pub use rule::{RuleBackend, StyleTarget};
pub use scene::{Road, SceneDescriptor, Traffic, Weather};

use crate::policy::{baseline_from, ActionMatrix, PolicyError, PolicyOrigin, RangeTable, ValidationError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyGenError {
    #[error("invalid {field}: '{value}'")]
    InvalidField { field: &'static str, value: String },
    #[error("generator configuration: {0}")]
    Config(String),
    #[error("prompt needs {len} characters, budget is {budget}")]
    PromptTooLong { len: usize, budget: usize },
    #[error("Timeout: no reply from the policy service in time")]
    Timeout,
    #[error("HttpError({0})")]
    Http(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("NoPolicyFound: reply contained no policy object")]
    NoPolicyFound,
    #[error("MalformedPolicy: {0}")]
    MalformedPolicy(String),
    #[error("{0}")]
    Validation(#[from] ValidationError),
}

impl PolicyGenError {
    /// Stable failure category for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidField { .. } => "InvalidField",
            Self::Config(_) => "Config",
            Self::PromptTooLong { .. } => "PromptTooLong",
            Self::Timeout => "Timeout",
            Self::Http(_) => "HttpError",
            Self::Transport(_) => "Transport",
            Self::NoPolicyFound => "NoPolicyFound",
            Self::MalformedPolicy(_) => "MalformedPolicy",
            Self::Validation(_) => "ValidationError",
        }
    }
}

impl From<PolicyError> for PolicyGenError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NoPolicyFound => Self::NoPolicyFound,
            PolicyError::MalformedPolicy(m) => Self::MalformedPolicy(m),
            PolicyError::Validation(v) => Self::Validation(v),
            PolicyError::Config(c) => Self::Config(c),
        }
    }
}

/// A generated policy with call statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub policy: ActionMatrix,
    /// End-to-end generation time in seconds; `None` for offline backends,
    /// whose timing would make runs irreproducible.
    pub latency: Option<f64>,
    pub attempts: u32,
}

/// Maps a prompt to a validated action matrix.
pub trait PolicyGenerator: Send + Sync {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<Generated, PolicyGenError>;
    fn origin(&self) -> PolicyOrigin;
}

impl std::fmt::Debug for dyn PolicyGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PolicyGenerator({:?})", self.origin())
    }
}

/// Ignores the prompt and returns the fixed baseline policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGenerator {
    pub policy: ActionMatrix,
}

impl BaselineGenerator {
    pub fn new(table: &RangeTable) -> Self {
        Self {
            policy: baseline_from(table),
        }
    }
}

impl Default for BaselineGenerator {
    fn default() -> Self {
        Self::new(&RangeTable::default())
    }
}

impl PolicyGenerator for BaselineGenerator {
    fn generate(&self, _bundle: &PromptBundle, _seed: u64) -> Result<Generated, PolicyGenError> {
        Ok(Generated {
            policy: self.policy.clone(),
            latency: None,
            attempts: 0,
        })
    }

    fn origin(&self) -> PolicyOrigin {
        PolicyOrigin::Baseline
    }
}
