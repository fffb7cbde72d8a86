//! Safety, comfort, efficiency and alignment metrics, the weighted driving
//! score, and takeover bookkeeping.

mod alignment;
mod comfort;
mod safety;
mod score;
mod takeover;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use alignment::{command_alignment, equal_param_weights, is_more_conservative, range_score, scenario_alignment};
pub use comfort::{comfort_metrics, gradient, population_variance, ComfortMetrics};
pub use safety::{collision_steps, time_to_collision, ttc, Ttc};
pub use score::{driving_score, relative_score, ttc_score, MetricKey, ScoreMap, WeightPreset};
pub use takeover::{relative_reduction, takeover_rate, SystemKind, TakeoverFilter, TakeoverRecord};

use crate::policy::{RangeTable, Style};
use crate::sim::TrajectoryLog;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("log has {0} samples; at least 3 are needed")]
    TooShort(usize),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid score: {0}")]
    Score(String),
    #[error("metric configuration: {0}")]
    Config(String),
    #[error("log does not record policy '{0}'")]
    MissingPolicy(String),
    #[error("cannot compare driving scores across weight presets '{0}' and '{1}'")]
    PresetMismatch(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub lane_width: f64,
    /// Runs whose minimum TTC is at or below this score 0 on safety.
    pub ttc_threshold: f64,
    /// Generation latency that still scores 100; slower calls score by ratio.
    pub latency_reference: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            vehicle_length: 4.5,
            vehicle_width: 1.85,
            lane_width: 3.5,
            ttc_threshold: 1.5,
            latency_reference: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ttc_min: Ttc,
    pub collisions: usize,
    #[serde(flatten)]
    pub comfort: ComfortMetrics,
    pub max_abs_lateral_error: f64,
    pub gen_latency: Option<f64>,
    pub command_alignment: f64,
    pub scenario_alignment: Option<f64>,
    pub scores: ScoreMap,
    pub weights: ScoreMap,
    pub weight_preset: String,
    pub driving_score: f64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    /// Score bounds, weight sum, and the weighted-sum identity.
    pub fn check(&self) -> Result<(), MetricError> {
        let s = driving_score(&self.scores, &self.weights)?;
        if (s - self.driving_score).abs() > 1e-9 {
            return Err(MetricError::Score(format!("stored score {} != recomputed {s}", self.driving_score)));
        }
        Ok(())
    }
}

/// Scores a finished run. Variance, acceleration and jerk are scored against
/// `baseline`, the comfort metrics of the baseline policy on the same
/// scenario. Metrics that do not apply (no lead, no latency, no weather
/// pairing) are dropped and the preset renormalized.
pub fn score_log(
    log: &TrajectoryLog,
    baseline: &ComfortMetrics,
    table: &RangeTable,
    preset: &WeightPreset,
    cfg: &ScoringConfig,
) -> Result<MetricReport, MetricError> {
    let comfort = comfort_metrics(log)?;
    let ttc_min = time_to_collision(log, cfg);
    let last = log.samples.last().expect("comfort_metrics checked the length");
    let policy = log
        .meta
        .policy(&last.policy_id)
        .ok_or_else(|| MetricError::MissingPolicy(last.policy_id.clone()))?;
    let expected = table.profile(log.meta.expected_style.unwrap_or(Style::Moderate)).ranges;
    let command = command_alignment(policy, &expected, &equal_param_weights())?;

    let mut scores = ScoreMap::new();
    match ttc_min {
        Ttc::NotApplicable => {}
        Ttc::Unbounded => {
            scores.insert(MetricKey::Ttc, 100.0);
        }
        Ttc::Seconds(t) => {
            scores.insert(MetricKey::Ttc, ttc_score(t, cfg.ttc_threshold));
        }
    }
    let rel = [
        (MetricKey::SvX, comfort.sv_x, baseline.sv_x),
        (MetricKey::SvY, comfort.sv_y, baseline.sv_y),
        (MetricKey::Ax, comfort.mean_abs_ax, baseline.mean_abs_ax),
        (MetricKey::Ay, comfort.mean_abs_ay, baseline.mean_abs_ay),
        (MetricKey::Jx, comfort.mean_abs_jx, baseline.mean_abs_jx),
        (MetricKey::Jy, comfort.mean_abs_jy, baseline.mean_abs_jy),
    ];
    for (k, v, b) in rel {
        scores.insert(k, relative_score(v, b));
    }
    if let Some(lat) = log.meta.gen_latency {
        scores.insert(MetricKey::Latency, relative_score(lat, cfg.latency_reference));
    }
    scores.insert(MetricKey::CommandAlignment, command);
    if let Some(sa) = log.meta.scenario_alignment {
        scores.insert(MetricKey::ScenarioAlignment, sa);
    }

    let available: Vec<MetricKey> = scores.keys().copied().collect();
    let weights = preset.restricted(&available)?;
    let driving = driving_score(&scores, &weights)?;

    Ok(MetricReport {
        ttc_min,
        collisions: collision_steps(log, cfg),
        comfort,
        max_abs_lateral_error: log.samples.iter().map(|s| s.lateral_error.abs()).fold(0.0, f64::max),
        gen_latency: log.meta.gen_latency,
        command_alignment: command,
        scenario_alignment: log.meta.scenario_alignment,
        scores,
        weights,
        weight_preset: preset.name.clone(),
        driving_score: driving,
    })
}

/// Errors unless every report used the same weight preset.
pub fn ensure_same_preset<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Result<(), MetricError> {
    let mut it = reports.into_iter();
    let Some(first) = it.next() else {
        return Ok(());
    };
    match it.find(|r| r.weight_preset != first.weight_preset) {
        Some(r) => Err(MetricError::PresetMismatch(first.weight_preset.clone(), r.weight_preset.clone())),
        None => Ok(()),
    }
}

pub const TABLE_COLUMNS: [&str; 12] = [
    "run", "TTC(s)", "SV_x", "SV_y", "|a_x|", "|a_y|", "|J_x|", "|J_y|", "latency(s)", "cmd_align", "scen_align", "score",
];

/// Fixed-width text table, one row per labelled report.
pub fn render_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricReport)>) -> String {
    let rows: Vec<(&str, &MetricReport)> = rows.into_iter().collect();
    let label_w = rows.iter().map(|(l, _)| l.len()).chain([TABLE_COLUMNS[0].len()]).max().unwrap_or(3);
    let num = |v: f64| format!("{v:.3}");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", TABLE_COLUMNS[0]);
    for c in &TABLE_COLUMNS[1..] {
        let _ = write!(out, " {c:>10}");
    }
    out.push('\n');
    for (label, r) in rows {
        let ttc = match r.ttc_min {
            Ttc::NotApplicable => "-".to_string(),
            Ttc::Unbounded => "inf".to_string(),
            Ttc::Seconds(s) => format!("{s:.2}"),
        };
        let c = &r.comfort;
        let cells = [
            ttc,
            num(c.sv_x),
            num(c.sv_y),
            num(c.mean_abs_ax),
            num(c.mean_abs_ay),
            num(c.mean_abs_jx),
            num(c.mean_abs_jy),
            opt(r.gen_latency),
            format!("{:.2}", r.command_alignment),
            opt(r.scenario_alignment),
            format!("{:.2}", r.driving_score),
        ];
        let _ = write!(out, "{label:<label_w$}");
        for cell in cells {
            let _ = write!(out, " {cell:>10}");
        }
        out.push('\n');
    }
    out
}
