use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{BackendKind, ExperimentPlan, Persona};
use super::run::{build_pool, run_trip, CellOutcome, HarnessContext, TripInput, TOOL_VERSION};
use super::HarnessError;
use crate::memory::MemoryStore;
use crate::metrics::{score_log, MetricReport, WeightPreset};
use crate::policy::ActionMatrix;
use crate::policygen::{PolicyGenerator, Weather};
use crate::sim::ScenarioKind;

/// The three compared systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationConfig {
    WithMemory,
    WithoutMemory,
    Baseline,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 3] = [Self::WithMemory, Self::WithoutMemory, Self::Baseline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WithMemory => "with-memory",
            Self::WithoutMemory => "without-memory",
            Self::Baseline => "baseline",
        }
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip: usize,
    pub memory_retrieved: usize,
    pub outcome: CellOutcome,
}

impl TripRecord {
    pub fn policy(&self) -> Option<&ActionMatrix> {
        match &self.outcome {
            CellOutcome::Ok { policy, .. } => Some(policy),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn report(&self) -> Option<&MetricReport> {
        match &self.outcome {
            CellOutcome::Ok { report, .. } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }
}

/// The scripted trip sequence of one (scenario, instruction, weather) under
/// one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub index: usize,
    pub scenario: ScenarioKind,
    pub instruction: String,
    pub weather: Weather,
    pub config: AblationConfig,
    pub trips: Vec<TripRecord>,
}

impl AblationCell {
    /// Whether any later trip ran different parameters from the first.
    pub fn policy_changed(&self) -> bool {
        let mut ps = self.trips.iter().filter_map(TripRecord::policy).map(ActionMatrix::params);
        match ps.next() {
            Some(first) => ps.any(|p| p != first),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub trips: usize,
    pub failed: usize,
    pub mean_driving_score: Option<f64>,
    /// Against the persona's preferred style.
    pub mean_command_alignment: Option<f64>,
    /// Sequences whose policy moved after the first trip.
    pub sequences_changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub tool_version: String,
    pub config_hash: String,
    pub generated_at: String,
    pub plan: ExperimentPlan,
    pub backend: BackendKind,
    pub persona: Persona,
    pub cells: Vec<AblationCell>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("ablation report: {e}")))
    }

    pub fn row(&self, config: AblationConfig) -> &AblationRow {
        self.rows.iter().find(|r| r.config == config).expect("every configuration has a row")
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().map(|r| r.failed).sum()
    }

    pub fn total_trips(&self) -> usize {
        self.rows.iter().map(|r| r.trips).sum()
    }
}

/// Runs each (scenario, instruction, weather) of the plan as a scripted
/// sequence of `persona.trips` trips under three configurations: the
/// plan's generator with memory, the same generator without memory, and the
/// fixed baseline. After every trip the persona's feedback is stored when
/// memory is on. Command alignment is scored against the persona's
/// preferred style throughout.
pub fn run_ablation(plan: &ExperimentPlan, ctx: &HarnessContext) -> Result<AblationReport, HarnessError> {
    plan.validate()?;
    let backend = plan
        .backends
        .iter()
        .copied()
        .find(|b| *b != BackendKind::Baseline)
        .ok_or_else(|| HarnessError::Config("ablation needs a rule or remote backend in the plan".into()))?;
    let generator = ctx.generator(plan, backend)?;
    let baseline_gen = ctx.generator(plan, BackendKind::Baseline)?;
    let baseline = ctx.baseline_comfort(plan, &plan.scenarios)?;
    let presets: BTreeMap<ScenarioKind, WeightPreset> =
        plan.scenarios.iter().map(|&k| Ok((k, ctx.preset_for(plan, k)?))).collect::<Result<_, HarnessError>>()?;
    let config_hash = ctx.config_hash(plan);

    let mut jobs = Vec::new();
    for &scenario in &plan.scenarios {
        for (ii, instr) in plan.instructions.iter().enumerate() {
            for &weather in &plan.weathers {
                let seq = jobs.len() / AblationConfig::ALL.len();
                for config in AblationConfig::ALL {
                    jobs.push((jobs.len(), seq, scenario, ii, instr, weather, config));
                }
            }
        }
    }

    let pool = build_pool(plan.workers)?;
    let cells: Vec<Result<AblationCell, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(index, seq, scenario, ii, instr, weather, config)| {
                let gen: &Arc<dyn PolicyGenerator> = match config {
                    AblationConfig::Baseline => &baseline_gen,
                    _ => &generator,
                };
                let user = format!("ablation-{scenario}-i{ii:02}-{weather}-{config}");
                let store = (config == AblationConfig::WithMemory).then(|| RwLock::new(MemoryStore::in_memory(user.clone())));
                let seed = plan.seed.wrapping_add(seq as u64);
                let mut trips = Vec::with_capacity(plan.persona.trips);
                for trip in 0..plan.persona.trips {
                    let out = run_trip(TripInput {
                        ctx,
                        plan,
                        generator: gen.as_ref(),
                        store: store.as_ref(),
                        user: &user,
                        scenario,
                        weather,
                        instruction: &instr.text,
                        expected: plan.persona.preferred_style,
                        seed,
                        config_hash: &config_hash,
                        feedback: Some(&plan.persona.feedback),
                        trip_no: trip,
                    });
                    let record = match out {
                        Ok(mut o) => {
                            let preset = &presets[&scenario];
                            o.log.meta.weight_preset = Some(preset.name.clone());
                            let report = score_log(&o.log, &baseline[&scenario], &ctx.table, preset, &ctx.scoring)?;
                            let policy = o.log.meta.policies.last().cloned().expect("closed loop records its policy");
                            TripRecord {
                                trip,
                                memory_retrieved: o.retrieved,
                                outcome: CellOutcome::Ok {
                                    policy,
                                    attempts: o.attempts,
                                    report,
                                },
                            }
                        }
                        Err(e) => TripRecord {
                            trip,
                            memory_retrieved: 0,
                            outcome: super::run::failed(&e),
                        },
                    };
                    trips.push(record);
                }
                Ok(AblationCell {
                    index,
                    scenario,
                    instruction: instr.text.clone(),
                    weather,
                    config,
                    trips,
                })
            })
            .collect()
    });
    let cells: Vec<AblationCell> = cells.into_iter().collect::<Result<_, _>>()?;

    let rows = AblationConfig::ALL
        .iter()
        .map(|&config| {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.config == config).collect();
            let reports: Vec<&MetricReport> = mine.iter().flat_map(|c| c.trips.iter().filter_map(TripRecord::report)).collect();
            let trips = mine.iter().map(|c| c.trips.len()).sum::<usize>();
            let mean = |f: fn(&MetricReport) -> f64| {
                (!reports.is_empty()).then(|| reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64)
            };
            AblationRow {
                config,
                trips,
                failed: trips - reports.len(),
                mean_driving_score: mean(|r| r.driving_score),
                mean_command_alignment: mean(|r| r.command_alignment),
                sequences_changed: mine.iter().filter(|c| c.policy_changed()).count(),
            }
        })
        .collect();

    Ok(AblationReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash,
        generated_at: chrono::Utc::now().to_rfc3339(),
        plan: plan.clone(),
        backend,
        persona: plan.persona.clone(),
        cells,
        rows,
    })
}
