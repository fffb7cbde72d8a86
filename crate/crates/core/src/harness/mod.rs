//! Batch experiments: scenario × instruction × weather × backend grids, the
//! memory ablation, and report rendering.

mod ablation;
mod plan;
mod report;
mod run;

pub use ablation::{run_ablation, AblationCell, AblationConfig, AblationReport, AblationRow, TripRecord};
pub use plan::{default_instructions, scene_context, BackendKind, ExperimentPlan, InstructionSpec, Persona, RemoteSection};
pub use report::{render_ablation_table, render_run_csv, render_run_table, rescore_cells};
pub use run::{
    cell_seed, cell_user, enumerate_cells, run_plan, weather_pairs, AggregateRow, Cell, CellOutcome, CellReport,
    HarnessContext, PlanOutcome, RunReport, TOOL_VERSION,
};

use crate::closed_loop::LoopError;
use crate::memory::MemoryError;
use crate::metrics::MetricError;
use crate::policygen::PolicyGenError;
use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("plan configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] SimError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Generation(#[from] PolicyGenError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "Config",
            Self::Scenario(_) => "Scenario",
            Self::Loop(_) => "ClosedLoop",
            Self::Generation(g) => g.kind(),
            Self::Metric(_) => "Metric",
            Self::Memory(_) => "Memory",
        }
    }
}
