//! Decoupled longitudinal PID and lateral MPC, plus the dense box-QP solver
//! behind the MPC.

mod mpc;
mod pid;
mod qp;

pub use mpc::{build_mpc_problem, condense_to_qp, mpc_step, MpcConfig, MpcOutput, MpcProblem, MpcWeights};
pub use pid::{pid_step, PidConfig, PidGains, PidState};
pub use qp::{solve_qp, solve_qp_with, QpError, QpProblem, QpSettings, QpSolution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("reference path exhausted at s={s:.2} m (length {length:.2} m)")]
    PathExhausted { s: f64, length: f64 },
    #[error("QP solver failed: {0}")]
    Solver(#[from] QpError),
}
