use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::sim::ScenarioKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKey {
    Ttc,
    SvX,
    SvY,
    Ax,
    Ay,
    Jx,
    Jy,
    Latency,
    CommandAlignment,
    ScenarioAlignment,
}

impl MetricKey {
    pub const ALL: [MetricKey; 10] = [
        Self::Ttc,
        Self::SvX,
        Self::SvY,
        Self::Ax,
        Self::Ay,
        Self::Jx,
        Self::Jy,
        Self::Latency,
        Self::CommandAlignment,
        Self::ScenarioAlignment,
    ];
}

pub type ScoreMap = BTreeMap<MetricKey, f64>;

/// Score of a lower-is-better quantity relative to the baseline's value:
/// `clamp(100·baseline/value, 0, 100)`. Matching or beating the baseline
/// scores 100.
pub fn relative_score(value: f64, baseline: f64) -> f64 {
    if value <= baseline {
        100.0
    } else {
        (100.0 * baseline / value).clamp(0.0, 100.0)
    }
}

/// 100 strictly above the threshold, 0 at or below it.
pub fn ttc_score(ttc: f64, threshold: f64) -> f64 {
    if ttc > threshold {
        100.0
    } else {
        0.0
    }
}

fn check_weights(weights: &ScoreMap) -> Result<(), MetricError> {
    if let Some((k, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(MetricError::Weights(format!("weight for {k:?} is {w}")));
    }
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MetricError::Weights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `Σ w_k·S_k` over the weighted metrics. Every weighted metric needs a
/// score in `[0, 100]`.
pub fn driving_score(scores: &ScoreMap, weights: &ScoreMap) -> Result<f64, MetricError> {
    check_weights(weights)?;
    let mut total = 0.0;
    for (k, w) in weights {
        let s = *scores
            .get(k)
            .ok_or_else(|| MetricError::Weights(format!("no score for weighted metric {k:?}")))?;
        if !(0.0..=100.0).contains(&s) {
            return Err(MetricError::Score(format!("{k:?} score {s} outside [0, 100]")));
        }
        total += w * s;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPreset {
    pub name: String,
    pub weights: ScoreMap,
}

const PRESETS: &str = include_str!("../../data/weight_presets.toml");

impl WeightPreset {
    /// All presets from a TOML table of `[name] metric = weight` sections.
    pub fn parse_all(text: &str) -> Result<Vec<Self>, MetricError> {
        let table: BTreeMap<String, ScoreMap> = toml::from_str(text).map_err(|e| MetricError::Config(e.to_string()))?;
        table
            .into_iter()
            .map(|(name, weights)| {
                check_weights(&weights).map_err(|e| MetricError::Config(format!("preset {name}: {e}")))?;
                Ok(Self { name, weights })
            })
            .collect()
    }

    pub fn builtin() -> Vec<Self> {
        Self::parse_all(PRESETS).expect("bundled presets are valid")
    }

    pub fn named(name: &str) -> Result<Self, MetricError> {
        Self::builtin()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| MetricError::Config(format!("unknown weight preset '{name}'")))
    }

    /// The preset used when a plan does not name one.
    pub fn default_for(kind: ScenarioKind) -> Self {
        let name = match kind {
            ScenarioKind::Acceleration => "accel-heavy",
            ScenarioKind::LeftTurn => "lateral-heavy",
            ScenarioKind::LaneChange => "balanced",
        };
        Self::named(name).expect("default presets exist")
    }

    /// Weights restricted to `available` metrics and renormalized to sum to 1.
    pub fn restricted(&self, available: &[MetricKey]) -> Result<ScoreMap, MetricError> {
        let kept: ScoreMap = self
            .weights
            .iter()
            .filter(|(k, _)| available.contains(k))
            .map(|(k, w)| (*k, *w))
            .collect();
        let sum: f64 = kept.values().sum();
        if sum <= 0.0 {
            return Err(MetricError::Weights(format!("preset {} has no weight on the available metrics", self.name)));
        }
        Ok(kept.into_iter().map(|(k, w)| (k, w / sum)).collect())
    }
}

impl FromStr for WeightPreset {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::named(s)
    }
}

impl fmt::Display for WeightPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}
