use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::policy::Style;
use crate::policygen::{RemoteClientConfig, Road, Traffic, Weather};
use crate::sim::{ScenarioConfig, ScenarioKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Baseline,
    Rule,
    Remote,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Rule => "rule",
            Self::Remote => "remote",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "rule" => Ok(Self::Rule),
            "remote" => Ok(Self::Remote),
            other => Err(HarnessError::Config(format!("unknown backend '{other}' (expected rule, remote or baseline)"))),
        }
    }
}

/// An instruction and the style its command alignment is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub text: String,
    pub expected: Style,
}

impl InstructionSpec {
    pub fn new(text: impl Into<String>, expected: Style) -> Self {
        Self {
            text: text.into(),
            expected,
        }
    }
}

/// Ten phrases covering explicit commands, driving-related requests and
/// purely affective statements.
pub fn default_instructions() -> Vec<InstructionSpec> {
    use Style::*;
    [
        ("go faster", Aggressive),
        ("speed up a bit", Aggressive),
        ("slow down", Conservative),
        ("drive more aggressively", Aggressive),
        ("keep a larger gap when it's busy", Conservative),
        ("drive normally", Moderate),
        ("take the turn smoothly", Conservative),
        ("I feel uncomfortable", Conservative),
        ("I'm late for a meeting", Aggressive),
        ("I just want to enjoy the ride", Moderate),
    ]
    .into_iter()
    .map(|(t, s)| InstructionSpec::new(t, s))
    .collect()
}

/// Scripted passenger for feedback-driven runs: the same feedback after
/// every trip, and the style their preferences are scored against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Persona {
    pub feedback: String,
    pub preferred_style: Style,
    /// Trips per instruction in the ablation.
    pub trips: usize,
}

impl Default for Persona {
    fn default() -> Self {
        Self {
            feedback: "I prefer keeping larger acceleration".into(),
            preferred_style: Style::Aggressive,
            trips: 2,
        }
    }
}

/// Overrides for the remote backend; unset fields fall back to the
/// environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSection {
    pub url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
}

impl RemoteSection {
    pub fn client_config(&self) -> Result<RemoteClientConfig, HarnessError> {
        let mut cfg = match &self.url {
            Some(url) => {
                let mut c = RemoteClientConfig::new(url.clone());
                if let Ok(Some(env)) = RemoteClientConfig::from_env().map(|e| e.api_key) {
                    c.api_key = Some(env);
                }
                c
            }
            None => RemoteClientConfig::from_env().map_err(|e| HarnessError::Config(e.to_string()))?,
        };
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(t) = self.timeout_secs {
            cfg.timeout_secs = t;
        }
        if let Some(n) = self.max_in_flight {
            cfg.max_in_flight = n;
        }
        Ok(cfg)
    }
}

/// A scenario × instruction × weather × backend × repetition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scenarios: Vec<ScenarioKind>,
    pub instructions: Vec<InstructionSpec>,
    pub weathers: Vec<Weather>,
    pub backends: Vec<BackendKind>,
    pub repetitions: usize,
    pub seed: u64,
    pub memory_enabled: bool,
    /// Memory entries retrieved per generation.
    pub memory_k: usize,
    /// Feedback stored with every trip when memory is enabled.
    pub feedback: Option<String>,
    /// When set, every cell reads and writes this one user's memory (and
    /// cells then run sequentially); otherwise each cell group is isolated.
    pub shared_persona: Option<String>,
    /// Weight preset for every run; by default each scenario uses its own.
    pub weight_preset: Option<String>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub persona: Persona,
    pub scenario_config: ScenarioConfig,
    pub remote: RemoteSection,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            instructions: default_instructions(),
            weathers: Weather::ALL.to_vec(),
            backends: vec![BackendKind::Rule],
            repetitions: 1,
            seed: 0,
            memory_enabled: true,
            memory_k: 3,
            feedback: None,
            shared_persona: None,
            weight_preset: None,
            workers: 0,
            persona: Persona::default(),
            scenario_config: ScenarioConfig::default(),
            remote: RemoteSection::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let empty = [
            ("scenarios", self.scenarios.is_empty()),
            ("instructions", self.instructions.is_empty()),
            ("weathers", self.weathers.is_empty()),
            ("backends", self.backends.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(HarnessError::Config(format!("{name} must not be empty")));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        if self.persona.trips == 0 {
            return Err(HarnessError::Config("persona.trips must be at least 1".into()));
        }
        if let Some(i) = self.instructions.iter().find(|i| i.text.trim().is_empty()) {
            return Err(HarnessError::Config(format!("empty instruction text: {:?}", i.text)));
        }
        Ok(())
    }

    /// Number of cells, i.e. closed-loop runs, in the grid.
    pub fn cell_count(&self) -> usize {
        self.scenarios.len() * self.instructions.len() * self.weathers.len() * self.backends.len() * self.repetitions
    }
}

/// Traffic and road type shown to the generator for each scenario.
pub fn scene_context(kind: ScenarioKind) -> (Traffic, Road) {
    match kind {
        ScenarioKind::Acceleration | ScenarioKind::LaneChange => (Traffic::Moderate, Road::Straight),
        ScenarioKind::LeftTurn => (Traffic::Free, Road::Intersection),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policygen::{classify_directness, DirectnessLevel};

    #[test]
    fn defaults_span_all_directness_levels() {
        let levels: std::collections::BTreeSet<DirectnessLevel> =
            default_instructions().iter().map(|i| classify_directness(&i.text)).collect();
        assert_eq!(levels.len(), 3);
    }

    #[test]
    fn default_grid_is_150_cells() {
        assert_eq!(ExperimentPlan::default().cell_count(), 150);
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let p = ExperimentPlan::default();
        assert_eq!(ExperimentPlan::from_toml(&p.to_toml()).unwrap(), p);
        let q = ExperimentPlan::from_toml("scenarios = [\"left-turn\"]\nweathers = [\"rain\"]\nseed = 9\n").unwrap();
        assert_eq!(q.scenarios, vec![ScenarioKind::LeftTurn]);
        assert_eq!(q.instructions.len(), 10);
        assert_eq!(q.seed, 9);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(matches!(ExperimentPlan::from_toml("weathers = []"), Err(HarnessError::Config(_))));
        assert!(matches!(ExperimentPlan::from_toml("repetitions = 0"), Err(HarnessError::Config(_))));
        assert!(matches!(ExperimentPlan::from_toml("weathers = [\"hail\"]"), Err(HarnessError::Config(_))));
        assert!(matches!(ExperimentPlan::from_toml("colour = 1"), Err(HarnessError::Config(_))));
    }
}
