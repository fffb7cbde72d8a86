//! Interactive trips: a session owns one closed-loop simulation, accepts
//! instructions and feedback while it runs, and emits decimated telemetry
//! ending in a terminal frame with the trip's metric report.
//!
//! Status flow: `Idle → Running → AwaitingFeedback → (Running | Ended)`.
//! A trip that reaches the end of its scenario moves to `AwaitingFeedback`;
//! feedback then either starts the next trip or ends the session.

mod core;
mod events;
mod manager;

pub use self::core::{LastInstruction, SessionCore, SessionStatus, SessionView, TelemetryFrame, TelemetryMessage, TerminalFrame};
pub use events::{EventKind, SessionEvent};
pub use manager::{
    baseline_comfort_for, FeedbackAck, InstructionAck, ManagerConfig, MemoryHit, MemoryQueryResult, SessionManager, TakeoverGroup,
    TakeoverGrouping, TakeoverStats,
};

use crate::closed_loop::LoopError;
use crate::memory::MemoryError;
use crate::metrics::MetricError;
use crate::policygen::PolicyGenError;
use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("session '{0}' not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    /// The backend failed; the previously active policy stays in force.
    #[error("policy generation failed, previous policy retained: {0}")]
    Generation(PolicyGenError),
    #[error("storage: {0}")]
    Storage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl SessionError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "NotFound",
            Self::Conflict(_) => "Conflict",
            Self::Validation { .. } => "Validation",
            Self::Generation(g) => g.kind(),
            Self::Storage(_) => "Storage",
            Self::Internal(_) => "Internal",
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl From<MemoryError> for SessionError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::InvalidEntry(m) => Self::validation("feedback", m),
            other => Self::Storage(other.to_string()),
        }
    }
}

impl From<LoopError> for SessionError {
    fn from(e: LoopError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<SimError> for SessionError {
    fn from(e: SimError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<MetricError> for SessionError {
    fn from(e: MetricError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        Self::Storage(e.to_string())
    }
}
