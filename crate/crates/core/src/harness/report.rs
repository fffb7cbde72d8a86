use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::ablation::{AblationConfig, AblationReport, TripRecord};
use super::run::{CellOutcome, RunReport};
use super::HarnessError;
use crate::metrics::{ensure_same_preset, render_table, score_log, MetricReport, Ttc, WeightPreset};
use crate::sim::TrajectoryLog;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Per-cell metric table followed by the per-(scenario, backend) summary.
/// Rows are grouped by scenario so driving scores are only ever listed next
/// to scores under the same weight preset.
pub fn render_run_table(report: &RunReport) -> String {
    let mut out = String::new();
    for &scenario in &report.plan.scenarios {
        let rows: Vec<(String, &MetricReport)> = report
            .cells
            .iter()
            .filter(|c| c.cell.scenario == scenario)
            .filter_map(|c| Some((c.label(), c.report()?)))
            .collect();
        let preset = rows.first().map_or("-", |(_, r)| r.weight_preset.as_str());
        let _ = writeln!(out, "== {scenario} (weights: {preset})");
        out.push_str(&render_table(rows.iter().map(|(l, r)| (l.as_str(), *r))));
        for c in report.cells.iter().filter(|c| c.cell.scenario == scenario) {
            if let CellOutcome::Failed { error_kind, message } = &c.outcome {
                let _ = writeln!(out, "{} FAILED {error_kind}: {message}", c.label());
            }
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "{:<14} {:<9} {:<14} {:>5} {:>6} {:>9} {:>10} {:>11} {:>11}",
        "scenario", "backend", "weights", "runs", "failed", "score", "cmd_align", "scen_align", "latency(s)"
    );
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{:<14} {:<9} {:<14} {:>5} {:>6} {:>9} {:>10} {:>11} {:>11}",
            a.scenario.as_str(),
            a.backend.as_str(),
            a.weight_preset,
            a.runs,
            a.failed,
            opt(a.mean_driving_score),
            opt(a.mean_command_alignment),
            opt(a.scenario_alignment),
            opt(a.mean_gen_latency),
        );
    }
    out
}

/// One CSV row per cell.
pub fn render_run_csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "index", "scenario", "instruction", "expected_style", "directness", "weather", "backend", "repetition", "status",
        "policy_id", "kp", "ki", "kd", "w_l", "w_h", "w_s", "ttc_min", "collisions", "sv_x", "sv_y", "mean_abs_ax",
        "mean_abs_ay", "mean_abs_jx", "mean_abs_jy", "max_abs_lateral_error", "gen_latency", "command_alignment",
        "scenario_alignment", "weight_preset", "driving_score", "error",
    ];
    w.write_record(header).expect("in-memory csv write");
    let f = |v: f64| v.to_string();
    let o = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for c in &report.cells {
        let mut row = vec![
            c.cell.index.to_string(),
            c.cell.scenario.to_string(),
            c.instruction_text.clone(),
            c.expected_style.to_string(),
            c.directness.to_string(),
            c.cell.weather.to_string(),
            c.cell.backend.to_string(),
            c.cell.repetition.to_string(),
        ];
        match &c.outcome {
            CellOutcome::Ok { policy, report: r, .. } => {
                let ttc = match r.ttc_min {
                    Ttc::NotApplicable => String::new(),
                    Ttc::Unbounded => "inf".into(),
                    Ttc::Seconds(s) => f(s),
                };
                row.extend([
                    "ok".to_string(),
                    policy.id.clone(),
                    f(policy.pid.kp),
                    f(policy.pid.ki),
                    f(policy.pid.kd),
                    f(policy.mpc.w_l),
                    f(policy.mpc.w_h),
                    f(policy.mpc.w_s),
                    ttc,
                    r.collisions.to_string(),
                    f(r.comfort.sv_x),
                    f(r.comfort.sv_y),
                    f(r.comfort.mean_abs_ax),
                    f(r.comfort.mean_abs_ay),
                    f(r.comfort.mean_abs_jx),
                    f(r.comfort.mean_abs_jy),
                    f(r.max_abs_lateral_error),
                    o(r.gen_latency),
                    f(r.command_alignment),
                    o(r.scenario_alignment),
                    r.weight_preset.clone(),
                    f(r.driving_score),
                    String::new(),
                ]);
            }
            CellOutcome::Failed { error_kind, message } => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), header.len() - row.len() - 1));
                row.push(format!("{error_kind}: {message}"));
            }
        }
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Summary rows, then one line per scripted sequence with the mean driving
/// score of each configuration side by side.
pub fn render_ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "backend: {}; persona feedback: {:?}; preferred style: {}; trips per sequence: {}",
        report.backend, report.persona.feedback, report.persona.preferred_style, report.persona.trips
    );
    let _ = writeln!(out, "{:<16} {:>6} {:>6} {:>9} {:>10} {:>8}", "config", "trips", "failed", "score", "cmd_align", "changed");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>9} {:>10} {:>8}",
            r.config.as_str(),
            r.trips,
            r.failed,
            opt(r.mean_driving_score),
            opt(r.mean_command_alignment),
            r.sequences_changed
        );
    }
    out.push('\n');

    let mut seqs: BTreeMap<(usize, String), BTreeMap<AblationConfig, Option<f64>>> = BTreeMap::new();
    for c in &report.cells {
        let ok: Vec<f64> = c.trips.iter().filter_map(TripRecord::report).map(|r| r.driving_score).collect();
        let m = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        let label = format!("{}/{}/{}", c.scenario, c.instruction, c.weather);
        seqs.entry((c.index / AblationConfig::ALL.len(), label)).or_default().insert(c.config, m);
    }
    let w = seqs.keys().map(|(_, l)| l.len()).max().unwrap_or(8).max(8);
    let _ = write!(out, "{:<w$}", "sequence");
    for c in AblationConfig::ALL {
        let _ = write!(out, " {:>15}", c.as_str());
    }
    out.push('\n');
    for ((_, label), cols) in &seqs {
        let _ = write!(out, "{label:<w$}");
        for c in AblationConfig::ALL {
            let _ = write!(out, " {:>15}", opt(cols.get(&c).copied().flatten()));
        }
        out.push('\n');
    }
    out
}

/// Re-scores every successful cell from its stored trajectory, using only
/// the report's baseline references and each log's own metadata. Fails if
/// the logs mix weight presets within a scenario.
pub fn rescore_cells(report: &RunReport, logs: &[Option<TrajectoryLog>]) -> Result<Vec<Option<MetricReport>>, HarnessError> {
    if logs.len() != report.cells.len() {
        return Err(HarnessError::Config(format!("{} logs for {} cells", logs.len(), report.cells.len())));
    }
    let rescored: Vec<Option<MetricReport>> = logs
        .iter()
        .map(|log| {
            let Some(log) = log else { return Ok(None) };
            let preset = match &log.meta.weight_preset {
                Some(name) => WeightPreset::named(name)?,
                None => WeightPreset::default_for(log.meta.scenario),
            };
            let baseline = report
                .baseline_comfort
                .get(&log.meta.scenario)
                .ok_or_else(|| HarnessError::Config(format!("no baseline reference for {}", log.meta.scenario)))?;
            Ok(Some(score_log(log, baseline, &report.range_table, &preset, &report.scoring)?))
        })
        .collect::<Result<_, HarnessError>>()?;
    for &scenario in &report.plan.scenarios {
        let same: Vec<&MetricReport> = report
            .cells
            .iter()
            .zip(&rescored)
            .filter(|(c, _)| c.cell.scenario == scenario)
            .filter_map(|(_, r)| r.as_ref())
            .collect();
        ensure_same_preset(same)?;
    }
    Ok(rescored)
}
