//! Step-able closed-loop run: plant, lead vehicle, PID speed loop and MPC
//! path loop, with policy swaps at step boundaries.

use serde::{Deserialize, Serialize};

use crate::control::{mpc_step, pid_step, ControlError, MpcConfig, PidConfig, PidState};
use crate::policy::ActionMatrix;
use crate::sim::{
    lead_state, step_plant, LeadSample, LogMeta, PlantConfig, ReferencePath, ScenarioSpec, SimError, TrajectoryLog,
    TrajectorySample, VehicleState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoopError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub plant: PlantConfig,
    pub pid: PidConfig,
    pub horizon: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            pid: PidConfig::default(),
            horizon: 20,
        }
    }
}

/// One closed-loop run in progress. Each [`Simulation::step`] uses exactly
/// one policy; [`Simulation::swap_policy`] between steps takes effect on the
/// next step without resetting the plant or the controller memory.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: ScenarioSpec,
    path: ReferencePath,
    cfg: LoopConfig,
    mpc: MpcConfig,
    state: VehicleState,
    pid_state: PidState,
    policy: ActionMatrix,
    step: usize,
    log: TrajectoryLog,
}

impl Simulation {
    pub fn new(spec: ScenarioSpec, policy: ActionMatrix, cfg: LoopConfig, mut meta: LogMeta) -> Result<Self, LoopError> {
        spec.validate()?;
        cfg.plant.validate()?;
        policy.mpc.validate()?;
        let path = spec.reference_path()?;
        let mpc = MpcConfig {
            horizon: cfg.horizon,
            ..MpcConfig::from_plant(&cfg.plant, spec.dt)
        };
        meta.scenario = spec.kind;
        if meta.policy(&policy.id) != Some(&policy) {
            meta.policies.push(policy.clone());
        }
        Ok(Self {
            state: spec.ego_initial,
            log: TrajectoryLog::new(meta, spec.dt),
            spec,
            path,
            cfg,
            mpc,
            pid_state: PidState::default(),
            policy,
            step: 0,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn policy(&self) -> &ActionMatrix {
        &self.policy
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.spec.steps()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.spec.steps()
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn meta_mut(&mut self) -> &mut LogMeta {
        &mut self.log.meta
    }

    pub fn swap_policy(&mut self, policy: ActionMatrix) {
        if self.log.meta.policy(&policy.id) != Some(&policy) {
            self.log.meta.policies.push(policy.clone());
        }
        self.policy = policy;
    }

    /// Advances one control period and returns the recorded sample, or
    /// `None` once the scenario duration is used up.
    pub fn step(&mut self) -> Result<Option<&TrajectorySample>, LoopError> {
        if self.is_finished() {
            return Ok(None);
        }
        let dt = self.spec.dt;
        let t = self.step as f64 * dt;
        let lead = match self.spec.lead {
            Some(_) => {
                let l = lead_state(&self.spec, t)?;
                Some(LeadSample { x: l.x, y: l.y, v: l.v })
            }
            None => None,
        };

        let proj = self.path.project(self.state.x, self.state.y);
        let (a_raw, pid_next) = pid_step(&self.policy.pid, &self.pid_state, proj.v_ref, self.state.v, dt, &self.cfg.pid)?;
        let mpc = mpc_step(&self.policy.mpc, &self.state, &self.path, &self.mpc)?;
        let a_cmd = self.cfg.plant.limit_accel(a_raw);
        let delta_cmd = self.cfg.plant.limit_steering(self.state.delta_f, mpc.delta, dt);

        let state = VehicleState { t, ..self.state };
        self.log.samples.push(TrajectorySample {
            t,
            x: state.x,
            y: state.y,
            psi: state.psi,
            v: state.v,
            a_cmd,
            delta_cmd,
            lead,
            policy_id: self.policy.id.clone(),
            ref_psi: proj.heading,
            ref_v: proj.v_ref,
            lateral_error: proj.lateral,
            qp_iterations: mpc.iterations as u32,
            qp_residual: mpc.residual,
        });

        self.state = step_plant(&self.cfg.plant, &state, a_cmd, delta_cmd, dt)?;
        self.pid_state = pid_next;
        self.step += 1;
        Ok(self.log.samples.last())
    }

    pub fn run_to_end(mut self) -> Result<TrajectoryLog, LoopError> {
        while self.step()?.is_some() {}
        Ok(self.log)
    }

    pub fn into_log(self) -> TrajectoryLog {
        self.log
    }
}

/// Runs `spec` to completion under a single policy.
pub fn run_closed_loop(
    spec: &ScenarioSpec,
    policy: &ActionMatrix,
    cfg: &LoopConfig,
    meta: LogMeta,
) -> Result<TrajectoryLog, LoopError> {
    Simulation::new(spec.clone(), policy.clone(), *cfg, meta)?.run_to_end()
}
