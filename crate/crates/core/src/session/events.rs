use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;
use crate::policy::ActionMatrix;
use crate::policygen::{DirectnessLevel, SceneDescriptor};
use crate::sim::ScenarioKind;

/// One line of a session's JSON-lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    /// Simulation time of the current trip when the event happened.
    pub sim_time: f64,
    pub trip: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        user_id: String,
        scenario: ScenarioKind,
        scene: SceneDescriptor,
        policy: ActionMatrix,
    },
    Started,
    Paused,
    Instruction {
        text: String,
        directness: DirectnessLevel,
        retrieved: usize,
        policy: Option<ActionMatrix>,
        latency: Option<f64>,
        error: Option<String>,
    },
    Feedback {
        text: String,
        takeover: bool,
        memory_seq: u64,
        /// False when given after the trip finished.
        mid_run: bool,
    },
    TripFinished {
        report: MetricReport,
        log_file: Option<String>,
    },
    TripStarted,
    Ended,
}
