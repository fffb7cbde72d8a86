use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::events::{EventKind, SessionEvent};
use super::SessionError;
use crate::closed_loop::{LoopConfig, Simulation};
use crate::memory::Retrieved;
use crate::metrics::{score_log, ComfortMetrics, MetricReport, ScoringConfig, SystemKind, WeightPreset};
use crate::policy::{ActionMatrix, RangeTable, Style};
use crate::policygen::{DirectnessLevel, SceneDescriptor};
use crate::sim::{LeadSample, LogMeta, ScenarioKind, ScenarioSpec, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    AwaitingFeedback,
    Ended,
}

/// Decimated snapshot of one control step. `seq` increases across trips;
/// `t` restarts with each trip and is strictly increasing within it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub session: String,
    pub trip: usize,
    pub seq: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub lead: Option<LeadSample>,
    pub a_cmd: f64,
    pub delta_cmd: f64,
    /// Reference speed minus actual speed.
    pub speed_error: f64,
    pub lateral_error: f64,
    pub policy_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalFrame {
    pub session: String,
    pub trip: usize,
    pub seq: u64,
    pub t: f64,
    pub driving_score: f64,
    pub report: MetricReport,
    pub log_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TelemetryMessage {
    Frame(TelemetryFrame),
    Terminal(TerminalFrame),
}

impl TelemetryMessage {
    pub fn t(&self) -> f64 {
        match self {
            Self::Frame(f) => f.t,
            Self::Terminal(f) => f.t,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Terminal(_))
    }
}

/// The most recent instruction, kept for feedback and display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastInstruction {
    pub text: String,
    pub directness: DirectnessLevel,
    pub expected_style: Style,
    pub retrieved: Vec<Retrieved>,
    pub latency: Option<f64>,
}

/// Read-only snapshot for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub user_id: String,
    pub scenario: ScenarioKind,
    pub scene: SceneDescriptor,
    pub status: SessionStatus,
    pub active_policy: ActionMatrix,
    pub trip: usize,
    pub t: f64,
    pub steps_done: usize,
    pub total_steps: usize,
    pub last_instruction: Option<LastInstruction>,
    pub last_report: Option<MetricReport>,
}

/// Fixed inputs a session needs from its manager.
#[derive(Debug, Clone)]
pub(crate) struct SessionSetup {
    pub id: String,
    pub user_id: String,
    pub spec: ScenarioSpec,
    pub scene: SceneDescriptor,
    pub policy: ActionMatrix,
    pub loop_cfg: LoopConfig,
    pub table: RangeTable,
    pub scoring: ScoringConfig,
    pub baseline: ComfortMetrics,
    pub decimation: usize,
    pub system: SystemKind,
    pub dir: Option<PathBuf>,
}

/// State machine of one session. Not thread-safe by itself; the manager
/// serializes access per session.
#[derive(Debug)]
pub struct SessionCore {
    setup: SessionSetup,
    status: SessionStatus,
    sim: Simulation,
    trip: usize,
    trip_finished: bool,
    frame_seq: u64,
    event_seq: u64,
    last_instruction: Option<LastInstruction>,
    last_report: Option<MetricReport>,
    events: Vec<SessionEvent>,
    event_file: Option<File>,
}

impl SessionCore {
    pub(crate) fn new(setup: SessionSetup) -> Result<Self, SessionError> {
        let sim = Self::new_sim(&setup, setup.policy.clone())?;
        let event_file = match &setup.dir {
            Some(d) => Some(OpenOptions::new().create(true).append(true).open(d.join(format!("{}.events.jsonl", setup.id)))?),
            None => None,
        };
        let mut s = Self {
            status: SessionStatus::Idle,
            sim,
            trip: 0,
            trip_finished: false,
            frame_seq: 0,
            event_seq: 0,
            last_instruction: None,
            last_report: None,
            events: Vec::new(),
            event_file,
            setup,
        };
        s.record(EventKind::Created {
            user_id: s.setup.user_id.clone(),
            scenario: s.setup.spec.kind,
            scene: s.setup.scene.clone(),
            policy: s.setup.policy.clone(),
        })?;
        Ok(s)
    }

    fn new_sim(setup: &SessionSetup, policy: ActionMatrix) -> Result<Simulation, SessionError> {
        let meta = LogMeta::new(setup.spec.kind, 0, setup.id.clone());
        Ok(Simulation::new(setup.spec.clone(), policy, setup.loop_cfg, meta)?)
    }

    pub fn id(&self) -> &str {
        &self.setup.id
    }

    pub fn user_id(&self) -> &str {
        &self.setup.user_id
    }

    pub fn scene(&self) -> &SceneDescriptor {
        &self.setup.scene
    }

    pub fn scenario(&self) -> ScenarioKind {
        self.setup.spec.kind
    }

    pub fn system(&self) -> SystemKind {
        self.setup.system
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn active_policy(&self) -> &ActionMatrix {
        self.sim.policy()
    }

    pub fn last_instruction(&self) -> Option<&LastInstruction> {
        self.last_instruction.as_ref()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn trip_finished(&self) -> bool {
        self.trip_finished
    }

    pub fn sim_time(&self) -> f64 {
        self.sim.steps_done() as f64 * self.setup.spec.dt
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.setup.id.clone(),
            user_id: self.setup.user_id.clone(),
            scenario: self.setup.spec.kind,
            scene: self.setup.scene.clone(),
            status: self.status,
            active_policy: self.sim.policy().clone(),
            trip: self.trip,
            t: self.sim_time(),
            steps_done: self.sim.steps_done(),
            total_steps: self.sim.total_steps(),
            last_instruction: self.last_instruction.clone(),
            last_report: self.last_report.clone(),
        }
    }

    pub(crate) fn record(&mut self, kind: EventKind) -> Result<(), SessionError> {
        let ev = SessionEvent {
            seq: self.event_seq,
            at: Utc::now(),
            sim_time: self.sim_time(),
            trip: self.trip,
            kind,
        };
        self.event_seq += 1;
        if let Some(f) = &mut self.event_file {
            let mut line = serde_json::to_string(&ev).map_err(|e| SessionError::Internal(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.events.push(ev);
        Ok(())
    }

    fn conflict(&self, op: &str) -> SessionError {
        SessionError::Conflict(format!("cannot {op} a session that is {:?}", self.status))
    }

    /// Idle → Running, or resumes from AwaitingFeedback; a finished trip is
    /// followed by a fresh one.
    pub fn start(&mut self) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::Idle | SessionStatus::AwaitingFeedback => {
                if self.trip_finished {
                    self.next_trip()?;
                }
                self.status = SessionStatus::Running;
                self.record(EventKind::Started)
            }
            SessionStatus::Running => Ok(()),
            SessionStatus::Ended => Err(self.conflict("start")),
        }
    }

    /// Running → AwaitingFeedback; the simulation clock stops.
    pub fn pause(&mut self) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::Running => {
                self.status = SessionStatus::AwaitingFeedback;
                self.record(EventKind::Paused)
            }
            _ => Err(self.conflict("pause")),
        }
    }

    /// Ends the session. A trip in progress is scored, so the telemetry
    /// stream still closes with a terminal frame.
    pub fn end(&mut self) -> Result<Option<TelemetryMessage>, SessionError> {
        if self.status == SessionStatus::Ended {
            return Err(self.conflict("end"));
        }
        let terminal = if !self.trip_finished && self.sim.steps_done() >= 3 {
            Some(self.finish_trip()?)
        } else {
            None
        };
        self.status = SessionStatus::Ended;
        self.record(EventKind::Ended)?;
        Ok(terminal)
    }

    fn next_trip(&mut self) -> Result<(), SessionError> {
        self.sim = Self::new_sim(&self.setup, self.sim.policy().clone())?;
        self.trip += 1;
        self.trip_finished = false;
        self.record(EventKind::TripStarted)
    }

    /// Takes effect at the next control step; plant and controller memory
    /// carry over.
    pub(crate) fn apply_policy(
        &mut self,
        policy: ActionMatrix,
        instruction: LastInstruction,
    ) -> Result<(), SessionError> {
        if self.status == SessionStatus::Ended {
            return Err(self.conflict("instruct"));
        }
        self.sim.swap_policy(policy.clone());
        self.sim.meta_mut().gen_latency = instruction.latency;
        self.sim.meta_mut().expected_style = Some(instruction.expected_style);
        self.record(EventKind::Instruction {
            text: instruction.text.clone(),
            directness: instruction.directness,
            retrieved: instruction.retrieved.len(),
            policy: Some(policy),
            latency: instruction.latency,
            error: None,
        })?;
        self.last_instruction = Some(instruction);
        Ok(())
    }

    /// Status change after feedback: `end` closes the session; otherwise a
    /// session waiting for feedback resumes (on a new trip if the last one
    /// finished).
    pub(crate) fn after_feedback(&mut self, end: bool) -> Result<Option<TelemetryMessage>, SessionError> {
        if end {
            return self.end();
        }
        if self.status == SessionStatus::AwaitingFeedback {
            self.start()?;
        }
        Ok(None)
    }

    /// Advances up to `max_steps` control steps while Running and returns the
    /// telemetry produced: every `decimation`-th step, then a terminal frame
    /// when the trip completes.
    pub fn tick(&mut self, max_steps: usize) -> Result<Vec<TelemetryMessage>, SessionError> {
        let mut out = Vec::new();
        for _ in 0..max_steps {
            if self.status != SessionStatus::Running || self.trip_finished {
                break;
            }
            let k = self.sim.steps_done();
            let sample = self.sim.step()?.cloned();
            if let Some(s) = sample {
                if k % self.setup.decimation.max(1) == 0 {
                    out.push(TelemetryMessage::Frame(TelemetryFrame {
                        session: self.setup.id.clone(),
                        trip: self.trip,
                        seq: self.frame_seq,
                        t: s.t,
                        x: s.x,
                        y: s.y,
                        psi: s.psi,
                        v: s.v,
                        lead: s.lead,
                        a_cmd: s.a_cmd,
                        delta_cmd: s.delta_cmd,
                        speed_error: s.ref_v - s.v,
                        lateral_error: s.lateral_error,
                        policy_id: s.policy_id.clone(),
                    }));
                    self.frame_seq += 1;
                }
            }
            if self.sim.is_finished() {
                out.push(self.finish_trip()?);
                self.status = SessionStatus::AwaitingFeedback;
            }
        }
        Ok(out)
    }

    fn finish_trip(&mut self) -> Result<TelemetryMessage, SessionError> {
        let preset = WeightPreset::default_for(self.setup.spec.kind);
        let meta = self.sim.meta_mut();
        meta.weight_preset = Some(preset.name.clone());
        if meta.expected_style.is_none() {
            meta.expected_style = Some(Style::Moderate);
        }
        let log: &TrajectoryLog = self.sim.log();
        let report = score_log(log, &self.setup.baseline, &self.setup.table, &preset, &self.setup.scoring)?;
        let log_file = match &self.setup.dir {
            Some(d) => {
                let name = format!("{}-trip{}.csv", self.setup.id, self.trip);
                std::fs::write(d.join(&name), log.to_csv())?;
                Some(name)
            }
            None => None,
        };
        let t = log.samples.last().map_or(0.0, |s| s.t);
        self.trip_finished = true;
        self.last_report = Some(report.clone());
        self.record(EventKind::TripFinished {
            report: report.clone(),
            log_file: log_file.clone(),
        })?;
        let msg = TelemetryMessage::Terminal(TerminalFrame {
            session: self.setup.id.clone(),
            trip: self.trip,
            seq: self.frame_seq,
            t,
            driving_score: report.driving_score,
            report,
            log_file,
        });
        self.frame_seq += 1;
        Ok(msg)
    }

    /// The current trip's trajectory so far.
    pub fn log(&self) -> &TrajectoryLog {
        self.sim.log()
    }
}
