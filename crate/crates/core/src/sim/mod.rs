//! Deterministic planar vehicle plant, scripted lead vehicle and reference
//! trajectories for the acceleration, lane-change and left-turn scenarios.

mod log;
mod path;
mod plant;
mod scenario;

pub use log::{LeadSample, LogMeta, TrajectoryLog, TrajectorySample, CSV_COLUMNS};
pub use path::{PathProjection, ReferencePath, Waypoint};
pub use plant::{step_plant, wrap_angle, PlantConfig, VehicleState};
pub use scenario::{
    build_scenario, kmh, lead_state, quintic_blend, LeadSpec, ScenarioConfig, ScenarioKind,
    ScenarioSpec,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("log format error: {0}")]
    Format(String),
}
