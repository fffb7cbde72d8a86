//! Closed-loop simulator and control stack for language-driven, personalized
//! motion control.
//!
//! Natural-language instructions become a six-parameter [`policy::ActionMatrix`]
//! (PID gains and MPC weights) through a pluggable generator; a per-user
//! [`memory`] of past instructions and feedback conditions later generations;
//! [`metrics`] scores each run for safety, comfort and alignment.

pub mod closed_loop;
pub mod control;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod policygen;
pub mod session;
pub mod sim;

pub use control::{MpcWeights, PidGains};
pub use policy::{ActionMatrix, ParamName, ParamRanges, PolicyOrigin, Style, StyleProfile};
pub use sim::{ScenarioKind, ScenarioSpec, TrajectoryLog, VehicleState};
