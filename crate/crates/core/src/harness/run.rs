use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plan::{scene_context, BackendKind, ExperimentPlan};
use super::HarnessError;
use crate::closed_loop::{run_closed_loop, LoopConfig};
use crate::memory::{MemoryStore, NewEntry};
use crate::metrics::{
    comfort_metrics, is_more_conservative, scenario_alignment, score_log, ComfortMetrics, MetricReport, ScoringConfig,
    WeightPreset,
};
use crate::policy::{baseline_from, validate, ActionMatrix, RangeTable, Style};
use crate::policygen::{
    build_system_message, BaselineGenerator, DirectnessLevel, Lexicon, PolicyGenError, PolicyGenerator, PromptBundle,
    RemoteBackend, RuleBackend, SceneDescriptor, Weather, DEFAULT_PROMPT_BUDGET,
};
use crate::sim::{build_scenario, LogMeta, ScenarioKind, TrajectoryLog};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything besides the plan that determines a run's results.
#[derive(Debug, Clone)]
pub struct HarnessContext {
    pub table: RangeTable,
    pub lexicon: Lexicon,
    pub scoring: ScoringConfig,
    pub loop_cfg: LoopConfig,
    /// Replaces the remote backend, e.g. with a stub in tests.
    pub remote_override: Option<Arc<dyn PolicyGenerator>>,
}

impl Default for HarnessContext {
    fn default() -> Self {
        Self {
            table: RangeTable::default(),
            lexicon: Lexicon::default(),
            scoring: ScoringConfig::default(),
            loop_cfg: LoopConfig::default(),
            remote_override: None,
        }
    }
}

impl HarnessContext {
    /// Hash of the plan and every configuration that affects results.
    pub fn config_hash(&self, plan: &ExperimentPlan) -> String {
        let mut h = Sha256::new();
        for part in [
            serde_json::to_string(plan),
            serde_json::to_string(&self.table),
            serde_json::to_string(&self.lexicon),
            serde_json::to_string(&self.scoring),
            serde_json::to_string(&self.loop_cfg),
        ] {
            h.update(part.expect("config serialization cannot fail").as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn generator(&self, plan: &ExperimentPlan, kind: BackendKind) -> Result<Arc<dyn PolicyGenerator>, HarnessError> {
        Ok(match kind {
            BackendKind::Baseline => Arc::new(BaselineGenerator::new(&self.table)),
            BackendKind::Rule => Arc::new(RuleBackend::new(self.table.clone(), self.lexicon.clone())),
            BackendKind::Remote => match &self.remote_override {
                Some(g) => Arc::clone(g),
                None => Arc::new(RemoteBackend::new(plan.remote.client_config()?, self.table.clone())),
            },
        })
    }

    /// Comfort metrics of the baseline policy on each scenario, the reference
    /// for relative comfort scores.
    pub fn baseline_comfort(
        &self,
        plan: &ExperimentPlan,
        kinds: &[ScenarioKind],
    ) -> Result<BTreeMap<ScenarioKind, ComfortMetrics>, HarnessError> {
        let policy = baseline_from(&self.table);
        kinds
            .iter()
            .map(|&k| {
                let spec = build_scenario(k, &plan.scenario_config)?;
                let log = run_closed_loop(&spec, &policy, &self.loop_cfg, LogMeta::new(k, plan.seed, "baseline"))?;
                Ok((k, comfort_metrics(&log)?))
            })
            .collect()
    }

    pub fn preset_for(&self, plan: &ExperimentPlan, kind: ScenarioKind) -> Result<WeightPreset, HarnessError> {
        match &plan.weight_preset {
            Some(name) => Ok(WeightPreset::named(name)?),
            None => Ok(WeightPreset::default_for(kind)),
        }
    }
}

/// One grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub scenario: ScenarioKind,
    pub instruction: usize,
    pub weather: Weather,
    pub backend: BackendKind,
    pub repetition: usize,
}

/// Cells in index order: scenario, instruction, weather, backend, repetition,
/// slowest to fastest varying.
pub fn enumerate_cells(plan: &ExperimentPlan) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(plan.cell_count());
    for &scenario in &plan.scenarios {
        for instruction in 0..plan.instructions.len() {
            for &weather in &plan.weathers {
                for &backend in &plan.backends {
                    for repetition in 0..plan.repetitions {
                        cells.push(Cell {
                            index: cells.len(),
                            scenario,
                            instruction,
                            weather,
                            backend,
                            repetition,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Memory owner for a cell: the shared persona, or one user per
/// (scenario, instruction, weather, backend) so repetitions see each other's
/// trips but no other cell's.
pub fn cell_user(plan: &ExperimentPlan, cell: &Cell) -> String {
    match &plan.shared_persona {
        Some(p) => p.clone(),
        None => format!("{}-i{:02}-{}-{}", cell.scenario, cell.instruction, cell.weather, cell.backend),
    }
}

/// Seed handed to the generator of a cell.
pub fn cell_seed(plan: &ExperimentPlan, cell: &Cell) -> u64 {
    plan.seed.wrapping_add(cell.index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok {
        policy: ActionMatrix,
        attempts: u32,
        report: MetricReport,
    },
    Failed {
        error_kind: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub cell: Cell,
    pub instruction_text: String,
    pub expected_style: Style,
    pub directness: DirectnessLevel,
    pub seed: u64,
    pub memory_retrieved: usize,
    pub outcome: CellOutcome,
}

impl CellReport {
    pub fn report(&self) -> Option<&MetricReport> {
        match &self.outcome {
            CellOutcome::Ok { report, .. } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn policy(&self) -> Option<&ActionMatrix> {
        match &self.outcome {
            CellOutcome::Ok { policy, .. } => Some(policy),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{:03} {}/{}/{}/{}#{}",
            self.cell.index, self.cell.scenario, self.instruction_text, self.cell.weather, self.cell.backend, self.cell.repetition
        )
    }
}

/// Means over the successful cells of one (scenario, backend) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: ScenarioKind,
    pub backend: BackendKind,
    pub weight_preset: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_driving_score: Option<f64>,
    pub mean_command_alignment: Option<f64>,
    pub scenario_alignment: Option<f64>,
    pub mean_gen_latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config_hash: String,
    /// Wall-clock creation time; the only field allowed to differ between
    /// two runs of the same offline plan.
    pub generated_at: String,
    pub plan: ExperimentPlan,
    pub range_table: RangeTable,
    pub scoring: ScoringConfig,
    pub baseline_comfort: BTreeMap<ScenarioKind, ComfortMetrics>,
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<AggregateRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("run report: {e}")))
    }

    /// The JSON with the timestamp blanked, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        Self {
            generated_at: String::new(),
            ..self.clone()
        }
        .to_json()
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.report().is_none()).count()
    }
}

/// A finished plan: the report plus each cell's trajectory (None for failed
/// cells), in cell order.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub report: RunReport,
    pub logs: Vec<Option<TrajectoryLog>>,
}

struct CellRun {
    cell: Cell,
    retrieved: usize,
    result: Result<(u32, TrajectoryLog), CellOutcome>,
}

impl CellRun {
    fn policy(&self) -> Option<&ActionMatrix> {
        self.result.as_ref().ok().and_then(|(_, log)| log.meta.policies.last())
    }
}

/// Deterministic timestamp for the n-th memory write of a run, so stores
/// and reports do not depend on the wall clock.
pub(crate) fn trip_time(n: usize) -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::from_timestamp(n as i64, 0).expect("small timestamps are valid")
}

/// Executes one trip: prompt, generate, validate, simulate. Memory is read
/// before and written after, when a store is given.
pub(crate) struct TripInput<'a> {
    pub ctx: &'a HarnessContext,
    pub plan: &'a ExperimentPlan,
    pub generator: &'a dyn PolicyGenerator,
    pub store: Option<&'a RwLock<MemoryStore>>,
    pub user: &'a str,
    pub scenario: ScenarioKind,
    pub weather: Weather,
    pub instruction: &'a str,
    pub expected: Style,
    pub seed: u64,
    pub config_hash: &'a str,
    pub feedback: Option<&'a str>,
    pub trip_no: usize,
}

pub(crate) struct TripOutput {
    pub retrieved: usize,
    pub attempts: u32,
    pub log: TrajectoryLog,
}

pub(crate) fn run_trip(t: TripInput<'_>) -> Result<TripOutput, HarnessError> {
    let spec = build_scenario(t.scenario, &t.plan.scenario_config)?;
    let (traffic, road) = scene_context(t.scenario);
    let scene = SceneDescriptor::new(t.weather, traffic, road);
    let history = match t.store {
        Some(s) => s.read().expect("memory lock poisoned").retrieve(t.instruction, t.plan.memory_k),
        None => Vec::new(),
    };
    let retrieved = history.len();
    let bundle = PromptBundle::new(
        build_system_message(t.user, &t.ctx.table),
        t.instruction,
        scene.clone(),
        history,
        DEFAULT_PROMPT_BUDGET,
    )?;
    let generated = t.generator.generate(&bundle, t.seed)?;
    validate(&generated.policy, &t.ctx.table.envelope).map_err(PolicyGenError::from)?;

    let mut meta = LogMeta::new(t.scenario, t.seed, t.config_hash);
    meta.expected_style = Some(t.expected);
    meta.gen_latency = generated.latency;
    let log = run_closed_loop(&spec, &generated.policy, &t.ctx.loop_cfg, meta)?;

    if let Some(store) = t.store {
        store.write().expect("memory lock poisoned").insert(NewEntry {
            instruction: t.instruction.to_string(),
            scene: scene.render(),
            policy: generated.policy.clone(),
            feedback: t.feedback.map(str::to_string),
            created_at: trip_time(t.trip_no),
        })?;
    }
    Ok(TripOutput {
        retrieved,
        attempts: generated.attempts,
        log,
    })
}

pub(crate) fn failed(err: &HarnessError) -> CellOutcome {
    CellOutcome::Failed {
        error_kind: err.kind().to_string(),
        message: err.to_string(),
    }
}

fn run_group(
    ctx: &HarnessContext,
    plan: &ExperimentPlan,
    config_hash: &str,
    generators: &BTreeMap<BackendKind, Arc<dyn PolicyGenerator>>,
    store: Option<&RwLock<MemoryStore>>,
    cells: &[Cell],
) -> Vec<CellRun> {
    cells
        .iter()
        .map(|cell| {
            let spec = &plan.instructions[cell.instruction];
            let user = cell_user(plan, cell);
            let trip = run_trip(TripInput {
                ctx,
                plan,
                generator: generators[&cell.backend].as_ref(),
                store,
                user: &user,
                scenario: cell.scenario,
                weather: cell.weather,
                instruction: &spec.text,
                expected: spec.expected,
                seed: cell_seed(plan, cell),
                config_hash,
                feedback: plan.feedback.as_deref(),
                trip_no: cell.index,
            });
            match trip {
                Ok(out) => CellRun {
                    cell: *cell,
                    retrieved: out.retrieved,
                    result: Ok((out.attempts, out.log)),
                },
                Err(e) => CellRun {
                    cell: *cell,
                    retrieved: 0,
                    result: Err(failed(&e)),
                },
            }
        })
        .collect()
}

pub(crate) fn build_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Runs every cell of the plan and scores it.
///
/// Cells sharing a memory owner run in index order on one worker; groups run
/// in parallel, and results are folded back in cell order, so the report
/// does not depend on scheduling. Generation failures mark the cell Failed
/// and the run continues.
pub fn run_plan(plan: &ExperimentPlan, ctx: &HarnessContext) -> Result<PlanOutcome, HarnessError> {
    plan.validate()?;
    let generators: BTreeMap<BackendKind, Arc<dyn PolicyGenerator>> = plan
        .backends
        .iter()
        .map(|&b| Ok((b, ctx.generator(plan, b)?)))
        .collect::<Result<_, HarnessError>>()?;
    let presets: BTreeMap<ScenarioKind, WeightPreset> =
        plan.scenarios.iter().map(|&k| Ok((k, ctx.preset_for(plan, k)?))).collect::<Result<_, HarnessError>>()?;
    let baseline = ctx.baseline_comfort(plan, &plan.scenarios)?;

    let cells = enumerate_cells(plan);
    let mut groups: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
    for c in &cells {
        groups.entry(cell_user(plan, c)).or_default().push(*c);
    }
    let config_hash = ctx.config_hash(plan);
    let pool = build_pool(plan.workers)?;
    let groups: Vec<(String, Vec<Cell>)> = groups.into_iter().collect();
    let results: Vec<Vec<CellRun>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(user, cells)| {
                let store = plan.memory_enabled.then(|| RwLock::new(MemoryStore::in_memory(user.clone())));
                run_group(ctx, plan, &config_hash, &generators, store.as_ref(), cells)
            })
            .collect()
    });
    let mut runs: Vec<CellRun> = results.into_iter().flatten().collect();
    runs.sort_by_key(|r| r.cell.index);
    apply_scenario_alignment(&mut runs);

    let mut cells = Vec::with_capacity(runs.len());
    let mut logs = Vec::with_capacity(runs.len());
    for run in runs {
        let spec = &plan.instructions[run.cell.instruction];
        let (outcome, log) = match run.result {
            Ok((attempts, mut log)) => {
                let preset = &presets[&run.cell.scenario];
                log.meta.weight_preset = Some(preset.name.clone());
                let report = score_log(&log, &baseline[&run.cell.scenario], &ctx.table, preset, &ctx.scoring)?;
                let policy = log.meta.policies.last().cloned().expect("closed loop records its policy");
                (CellOutcome::Ok { policy, attempts, report }, Some(log))
            }
            Err(f) => (f, None),
        };
        cells.push(CellReport {
            cell: run.cell,
            instruction_text: spec.text.clone(),
            expected_style: spec.expected,
            directness: ctx.lexicon.classify_directness(&spec.text),
            seed: cell_seed(plan, &run.cell),
            memory_retrieved: run.retrieved,
            outcome,
        });
        logs.push(log);
    }

    let aggregates = aggregate(plan, &cells, &presets);
    let report = RunReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash,
        generated_at: chrono::Utc::now().to_rfc3339(),
        plan: plan.clone(),
        range_table: ctx.table.clone(),
        scoring: ctx.scoring,
        baseline_comfort: baseline,
        cells,
        aggregates,
    };
    Ok(PlanOutcome { report, logs })
}

type PairKey = (ScenarioKind, usize, BackendKind, usize);

fn pair_key(c: &Cell) -> PairKey {
    (c.scenario, c.instruction, c.backend, c.repetition)
}

/// Pairs each adverse-weather cell with the sunny cell of the same scenario,
/// instruction, backend and repetition, and records the per-run outcome
/// (100 if more conservative, else 0) in the adverse cell's log.
fn apply_scenario_alignment(runs: &mut [CellRun]) {
    let sunny: BTreeMap<PairKey, ActionMatrix> = runs
        .iter()
        .filter(|r| r.cell.weather == Weather::Sunny)
        .filter_map(|r| Some((pair_key(&r.cell), r.policy()?.clone())))
        .collect();
    for run in runs.iter_mut() {
        if !run.cell.weather.is_adverse() {
            continue;
        }
        let Some(clear) = sunny.get(&pair_key(&run.cell)) else { continue };
        if let Ok((_, log)) = &mut run.result {
            let adverse = log.meta.policies.last().expect("closed loop records its policy");
            let conservative = is_more_conservative(adverse, clear);
            log.meta.scenario_alignment = Some(if conservative { 100.0 } else { 0.0 });
        }
    }
}

/// Adverse/sunny policy pairs among `cells`, as used for scenario alignment.
pub fn weather_pairs(cells: &[CellReport]) -> Vec<(ActionMatrix, ActionMatrix)> {
    let sunny: BTreeMap<PairKey, &ActionMatrix> = cells
        .iter()
        .filter(|c| c.cell.weather == Weather::Sunny)
        .filter_map(|c| Some((pair_key(&c.cell), c.policy()?)))
        .collect();
    cells
        .iter()
        .filter(|c| c.cell.weather.is_adverse())
        .filter_map(|c| Some((c.policy()?.clone(), (*sunny.get(&pair_key(&c.cell))?).clone())))
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(
    plan: &ExperimentPlan,
    cells: &[CellReport],
    presets: &BTreeMap<ScenarioKind, WeightPreset>,
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &scenario in &plan.scenarios {
        for &backend in &plan.backends {
            let group: Vec<CellReport> = cells
                .iter()
                .filter(|c| c.cell.scenario == scenario && c.cell.backend == backend)
                .cloned()
                .collect();
            let ok: Vec<&MetricReport> = group.iter().filter_map(CellReport::report).collect();
            rows.push(AggregateRow {
                scenario,
                backend,
                weight_preset: presets[&scenario].name.clone(),
                runs: group.len(),
                failed: group.len() - ok.len(),
                mean_driving_score: mean(ok.iter().map(|r| r.driving_score)),
                mean_command_alignment: mean(ok.iter().map(|r| r.command_alignment)),
                scenario_alignment: scenario_alignment(&weather_pairs(&group)),
                mean_gen_latency: mean(ok.iter().filter_map(|r| r.gen_latency)),
            });
        }
    }
    rows
}
