use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::core::{LastInstruction, SessionCore, SessionSetup, SessionStatus, SessionView, TelemetryMessage};
use super::events::EventKind;
use super::SessionError;
use crate::closed_loop::{run_closed_loop, LoopConfig};
use crate::harness::scene_context;
use crate::memory::{MemoryEntry, MemoryRegistry, NewEntry, Retrieved};
use crate::metrics::{comfort_metrics, takeover_rate, ComfortMetrics, ScoringConfig, SystemKind, TakeoverFilter, TakeoverRecord};
use crate::policy::{baseline_from, validate, ActionMatrix, PolicyOrigin, RangeTable};
use crate::policygen::{
    build_system_message, DirectnessLevel, Lexicon, PolicyGenError, PolicyGenerator, PromptBundle, SceneDescriptor,
    Weather, DEFAULT_PROMPT_BUDGET,
};
use crate::sim::{build_scenario, LogMeta, ScenarioConfig, ScenarioKind};

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    /// Root for memory stores, session event logs, trip logs and takeover
    /// records; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Telemetry is emitted every `decimation`-th control step.
    pub decimation: usize,
    pub memory_k: usize,
    pub scenario: ScenarioConfig,
    pub loop_cfg: LoopConfig,
    pub scoring: ScoringConfig,
    pub table: RangeTable,
    pub lexicon: Lexicon,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            decimation: 4,
            memory_k: 3,
            scenario: ScenarioConfig::default(),
            loop_cfg: LoopConfig::default(),
            scoring: ScoringConfig::default(),
            table: RangeTable::default(),
            lexicon: Lexicon::default(),
        }
    }
}

/// Reply to an accepted instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionAck {
    pub policy: ActionMatrix,
    pub previous_policy_id: String,
    pub directness: DirectnessLevel,
    pub retrieved: Vec<Retrieved>,
    pub latency: Option<f64>,
    pub attempts: u32,
    /// Simulation time at which the new policy takes over.
    pub applied_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub memory_seq: u64,
    pub takeover: TakeoverRecord,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryHit {
    /// `None` when listing without a query.
    pub similarity: Option<f64>,
    pub entry: MemoryEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueryResult {
    pub user_id: String,
    pub total: usize,
    pub query: Option<String>,
    pub results: Vec<MemoryHit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TakeoverGrouping {
    Level,
    System,
    Scenario,
}

impl std::str::FromStr for TakeoverGrouping {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level" => Ok(Self::Level),
            "system" => Ok(Self::System),
            "scenario" => Ok(Self::Scenario),
            other => Err(SessionError::validation("by", format!("'{other}' (expected level, system or scenario)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoverGroup {
    pub key: String,
    pub trips: usize,
    pub taken_over: usize,
    /// Percent of trips taken over; `None` when no trips match.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoverStats {
    pub by: Option<TakeoverGrouping>,
    pub trips: usize,
    /// Percent of trips taken over; `None` when no trips match.
    pub rate: Option<f64>,
    pub groups: Vec<TakeoverGroup>,
}

type Sink = Arc<dyn Fn(&str, &TelemetryMessage) + Send + Sync>;

/// Comfort of the baseline policy on a scenario: the reference that trip
/// reports are scored against.
pub fn baseline_comfort_for(
    kind: ScenarioKind,
    scenario: &ScenarioConfig,
    loop_cfg: &LoopConfig,
    table: &RangeTable,
) -> Result<ComfortMetrics, SessionError> {
    let spec = build_scenario(kind, scenario)?;
    let log = run_closed_loop(&spec, &baseline_from(table), loop_cfg, LogMeta::new(kind, 0, "baseline"))?;
    Ok(comfort_metrics(&log)?)
}

/// Owns all sessions, the per-user memory stores and the takeover records.
///
/// Every operation on a session holds that session's lock, so requests to
/// one session are serialized while different sessions proceed in parallel.
/// Generation runs outside the lock; the resulting policy is applied at the
/// next step boundary.
pub struct SessionManager {
    cfg: ManagerConfig,
    generator: Arc<dyn PolicyGenerator>,
    memory: MemoryRegistry,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionCore>>>>,
    takeovers: Mutex<(Vec<TakeoverRecord>, Option<File>)>,
    baselines: Mutex<BTreeMap<ScenarioKind, ComfortMetrics>>,
    counter: AtomicU64,
    sink: RwLock<Option<Sink>>,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

const TAKEOVER_FILE: &str = "takeovers.jsonl";

impl SessionManager {
    pub fn new(cfg: ManagerConfig, generator: Arc<dyn PolicyGenerator>) -> Result<Self, SessionError> {
        let (memory, records, file) = match &cfg.data_dir {
            Some(dir) => {
                fs::create_dir_all(dir.join("memory"))?;
                fs::create_dir_all(dir.join("sessions"))?;
                let path = dir.join(TAKEOVER_FILE);
                let records = load_takeovers(&path)?;
                let file = OpenOptions::new().create(true).append(true).open(&path)?;
                (MemoryRegistry::on_disk(dir.join("memory")), records, Some(file))
            }
            None => (MemoryRegistry::in_memory(), Vec::new(), None),
        };
        Ok(Self {
            cfg,
            generator,
            memory,
            sessions: RwLock::new(BTreeMap::new()),
            takeovers: Mutex::new((records, file)),
            baselines: Mutex::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
            sink: RwLock::new(None),
        })
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.cfg
    }

    /// Receives every telemetry message, in order per session, while the
    /// session lock is held. Must not block.
    pub fn set_sink(&self, sink: impl Fn(&str, &TelemetryMessage) + Send + Sync + 'static) {
        *self.sink.write().expect("sink lock poisoned") = Some(Arc::new(sink));
    }

    fn emit(&self, id: &str, msgs: &[TelemetryMessage]) {
        if let Some(sink) = self.sink.read().expect("sink lock poisoned").as_ref() {
            for m in msgs {
                sink(id, m);
            }
        }
    }

    fn system(&self) -> SystemKind {
        match self.generator.origin() {
            PolicyOrigin::Baseline => SystemKind::Baseline,
            _ => SystemKind::Ours,
        }
    }

    fn baseline(&self, kind: ScenarioKind) -> Result<ComfortMetrics, SessionError> {
        let mut cache = self.baselines.lock().expect("baseline cache poisoned");
        if let Some(b) = cache.get(&kind) {
            return Ok(*b);
        }
        let b = baseline_comfort_for(kind, &self.cfg.scenario, &self.cfg.loop_cfg, &self.cfg.table)?;
        cache.insert(kind, b);
        Ok(b)
    }

    fn new_id(&self, user: &str) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut h = Sha256::new();
        h.update(user.as_bytes());
        h.update(n.to_le_bytes());
        h.update(chrono::Utc::now().timestamp_nanos_opt().unwrap_or_default().to_le_bytes());
        format!("s-{}", &hex::encode(h.finalize())[..12])
    }

    /// New session in `Idle` with the baseline policy; opens (or creates)
    /// the user's memory store.
    pub fn create_session(&self, user_id: &str, scenario: &str, weather: &str) -> Result<SessionView, SessionError> {
        if user_id.trim().is_empty() {
            return Err(SessionError::validation("user_id", "must not be empty"));
        }
        let kind: ScenarioKind = scenario.parse().map_err(|_| SessionError::validation("scenario", format!("unknown scenario '{scenario}'")))?;
        let weather: Weather = weather.parse().map_err(|_| SessionError::validation("weather", format!("unknown weather '{weather}'")))?;
        self.memory.store(user_id)?;
        let (traffic, road) = scene_context(kind);
        let id = self.new_id(user_id);
        let setup = SessionSetup {
            id: id.clone(),
            user_id: user_id.to_string(),
            spec: build_scenario(kind, &self.cfg.scenario)?,
            scene: SceneDescriptor::new(weather, traffic, road),
            policy: baseline_from(&self.cfg.table),
            loop_cfg: self.cfg.loop_cfg,
            table: self.cfg.table.clone(),
            scoring: self.cfg.scoring,
            baseline: self.baseline(kind)?,
            decimation: self.cfg.decimation,
            system: self.system(),
            dir: self.cfg.data_dir.as_ref().map(|d| d.join("sessions")),
        };
        let core = SessionCore::new(setup)?;
        let view = core.view();
        self.sessions.write().expect("session map poisoned").insert(id, Arc::new(Mutex::new(core)));
        Ok(view)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<SessionCore>>, SessionError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn lock<'a>(s: &'a Arc<Mutex<SessionCore>>) -> MutexGuard<'a, SessionCore> {
        s.lock().expect("session lock poisoned")
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map poisoned").keys().cloned().collect()
    }

    pub fn view(&self, id: &str) -> Result<SessionView, SessionError> {
        Ok(Self::lock(&self.session(id)?).view())
    }

    pub fn start(&self, id: &str) -> Result<SessionView, SessionError> {
        let s = self.session(id)?;
        let mut core = Self::lock(&s);
        core.start()?;
        Ok(core.view())
    }

    pub fn pause(&self, id: &str) -> Result<SessionView, SessionError> {
        let s = self.session(id)?;
        let mut core = Self::lock(&s);
        core.pause()?;
        Ok(core.view())
    }

    pub fn end(&self, id: &str) -> Result<SessionView, SessionError> {
        let s = self.session(id)?;
        let mut core = Self::lock(&s);
        if let Some(t) = core.end()? {
            self.emit(id, &[t]);
        }
        Ok(core.view())
    }

    /// Advances a running session by up to `max_steps` steps and forwards
    /// the telemetry to the sink. Returns the status afterwards.
    pub fn tick(&self, id: &str, max_steps: usize) -> Result<SessionStatus, SessionError> {
        let s = self.session(id)?;
        let mut core = Self::lock(&s);
        let msgs = core.tick(max_steps)?;
        self.emit(id, &msgs);
        Ok(core.status())
    }

    /// Classifies, retrieves memory, generates and validates a policy, then
    /// swaps it in. On any generation failure the active policy is kept and
    /// the failure is logged and returned.
    pub fn submit_instruction(&self, id: &str, text: &str) -> Result<InstructionAck, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::validation("text", "instruction must not be empty"));
        }
        let s = self.session(id)?;
        let (user, scene) = {
            let core = Self::lock(&s);
            if core.status() == SessionStatus::Ended {
                return Err(SessionError::Conflict("session has ended".into()));
            }
            (core.user_id().to_string(), core.scene().clone())
        };
        let directness = self.cfg.lexicon.classify_directness(text);
        let store = self.memory.store(&user)?;
        let history = store.read().expect("memory lock poisoned").retrieve(text, self.cfg.memory_k);

        let generated = PromptBundle::new(
            build_system_message(&user, &self.cfg.table),
            text,
            scene,
            history.clone(),
            DEFAULT_PROMPT_BUDGET,
        )
        .and_then(|bundle| {
            let seed = self.counter.fetch_add(1, Ordering::Relaxed);
            let g = self.generator.generate(&bundle, seed)?;
            validate(&g.policy, &self.cfg.table.envelope).map_err(PolicyGenError::from)?;
            Ok((g, bundle.history.len()))
        });

        let mut core = Self::lock(&s);
        match generated {
            Ok((g, _)) => {
                let previous_policy_id = core.active_policy().id.clone();
                let applied_at = core.sim_time();
                let last = LastInstruction {
                    text: text.to_string(),
                    directness,
                    expected_style: self.cfg.lexicon.target_style(text),
                    retrieved: history.clone(),
                    latency: g.latency,
                };
                core.apply_policy(g.policy.clone(), last)?;
                Ok(InstructionAck {
                    policy: g.policy,
                    previous_policy_id,
                    directness,
                    retrieved: history,
                    latency: g.latency,
                    attempts: g.attempts,
                    applied_at,
                })
            }
            Err(e) => {
                core.record(EventKind::Instruction {
                    text: text.to_string(),
                    directness,
                    retrieved: history.len(),
                    policy: None,
                    latency: None,
                    error: Some(e.to_string()),
                })?;
                Err(match e {
                    PolicyGenError::InvalidField { field, value } => SessionError::validation(field, value),
                    other => SessionError::Generation(other),
                })
            }
        }
    }

    /// Stores (last instruction, scene, active policy, feedback) in the
    /// user's memory and records the takeover flag; both are durable before
    /// this returns. `end` closes the session; otherwise a session waiting
    /// for feedback resumes.
    pub fn submit_feedback(&self, id: &str, text: &str, takeover: bool, end: bool) -> Result<FeedbackAck, SessionError> {
        let s = self.session(id)?;
        let mut core = Self::lock(&s);
        if core.status() == SessionStatus::Ended {
            return Err(SessionError::Conflict("session has ended".into()));
        }
        let Some(last) = core.last_instruction().cloned() else {
            return Err(SessionError::Conflict("feedback requires a prior instruction".into()));
        };
        let store = self.memory.store(core.user_id())?;
        let memory_seq = store.write().expect("memory lock poisoned").insert(NewEntry {
            instruction: last.text.clone(),
            scene: core.scene().render(),
            policy: core.active_policy().clone(),
            feedback: Some(text.to_string()),
            created_at: chrono::Utc::now(),
        })?;
        let record = TakeoverRecord {
            session: id.to_string(),
            instruction: last.text,
            directness: last.directness,
            system: core.system(),
            scenario: Some(core.scenario()),
            taken_over: takeover,
        };
        self.append_takeover(record.clone())?;
        let mid_run = !core.trip_finished();
        core.record(EventKind::Feedback {
            text: text.to_string(),
            takeover,
            memory_seq,
            mid_run,
        })?;
        if let Some(t) = core.after_feedback(end)? {
            self.emit(id, &[t]);
        }
        Ok(FeedbackAck {
            memory_seq,
            takeover: record,
            status: core.status(),
        })
    }

    fn append_takeover(&self, record: TakeoverRecord) -> Result<(), SessionError> {
        let mut guard = self.takeovers.lock().expect("takeover lock poisoned");
        let (records, file) = &mut *guard;
        if let Some(f) = file {
            let mut line = serde_json::to_string(&record).map_err(|e| SessionError::Internal(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        records.push(record);
        Ok(())
    }

    pub fn takeovers(&self) -> Vec<TakeoverRecord> {
        self.takeovers.lock().expect("takeover lock poisoned").0.clone()
    }

    /// Takeover rate overall and per group, computed by the metrics module
    /// over the persisted records.
    pub fn takeover_stats(&self, by: Option<TakeoverGrouping>) -> TakeoverStats {
        let records = self.takeovers();
        let filters: Vec<(String, TakeoverFilter)> = match by {
            None => Vec::new(),
            Some(TakeoverGrouping::Level) => [DirectnessLevel::L1, DirectnessLevel::L2, DirectnessLevel::L3]
                .into_iter()
                .map(|d| (d.to_string(), TakeoverFilter { directness: Some(d), ..Default::default() }))
                .collect(),
            Some(TakeoverGrouping::System) => [SystemKind::Baseline, SystemKind::Ours]
                .into_iter()
                .map(|s| {
                    let key = serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                    (key, TakeoverFilter { system: Some(s), ..Default::default() })
                })
                .collect(),
            Some(TakeoverGrouping::Scenario) => ScenarioKind::ALL
                .into_iter()
                .map(|k| (k.to_string(), TakeoverFilter { scenario: Some(k), ..Default::default() }))
                .collect(),
        };
        let groups = filters
            .into_iter()
            .map(|(key, f)| {
                let matching: Vec<&TakeoverRecord> = records.iter().filter(|r| f.matches(r)).collect();
                TakeoverGroup {
                    key,
                    trips: matching.len(),
                    taken_over: matching.iter().filter(|r| r.taken_over).count(),
                    rate: takeover_rate(&records, &f),
                }
            })
            .collect();
        TakeoverStats {
            by,
            trips: records.len(),
            rate: takeover_rate(&records, &TakeoverFilter::default()),
            groups,
        }
    }

    /// Top-`k` entries for `query`, or the `k` most recent when no query is
    /// given.
    pub fn memory(&self, user_id: &str, query: Option<&str>, k: usize) -> Result<MemoryQueryResult, SessionError> {
        let store = self.memory.store(user_id)?;
        let store = store.read().expect("memory lock poisoned");
        let query = query.filter(|q| !q.trim().is_empty());
        let results = match query {
            Some(q) => store
                .retrieve(q, k)
                .into_iter()
                .map(|r| MemoryHit {
                    similarity: Some(r.similarity),
                    entry: r.entry,
                })
                .collect(),
            None => store
                .entries()
                .iter()
                .rev()
                .take(k)
                .map(|e| MemoryHit {
                    similarity: None,
                    entry: e.clone(),
                })
                .collect(),
        };
        Ok(MemoryQueryResult {
            user_id: user_id.to_string(),
            total: store.len(),
            query: query.map(str::to_string),
            results,
        })
    }
}

/// Reads persisted takeover records, ignoring a torn final line.
fn load_takeovers(path: &std::path::Path) -> Result<Vec<TakeoverRecord>, SessionError> {
    let Ok(f) = File::open(path) else {
        return Ok(Vec::new());
    };
    let lines: Vec<String> = BufReader::new(f).lines().collect::<Result<_, _>>()?;
    let n = lines.len();
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == n => break,
            Err(e) => return Err(SessionError::Storage(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}
