use serde::{Deserialize, Serialize};

use super::ScoringConfig;
use crate::sim::{TrajectoryLog, TrajectorySample};

/// Minimum time-to-collision of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ttc {
    /// No lead vehicle in the scenario.
    NotApplicable,
    /// The ego never closed on a lead in its lane.
    Unbounded,
    Seconds(f64),
}

impl Ttc {
    pub fn seconds(&self) -> Option<f64> {
        match self {
            Self::Seconds(s) => Some(*s),
            _ => None,
        }
    }
}

/// `gap / closing_speed`, or `None` when the gap is not closing.
pub fn ttc(gap: f64, v_ego: f64, v_lead: f64) -> Option<f64> {
    let closing = v_ego - v_lead;
    (closing > 0.0).then(|| gap.max(0.0) / closing)
}

/// Bumper-to-bumper gap to the lead when it is ahead of the ego in the ego's
/// lane; `None` otherwise.
fn lane_gap(s: &TrajectorySample, cfg: &ScoringConfig) -> Option<(f64, f64)> {
    let lead = s.lead?;
    let same_lane = (lead.y - s.y).abs() < 0.5 * cfg.lane_width;
    (same_lane && lead.x >= s.x).then(|| (lead.x - s.x - cfg.vehicle_length, lead.v))
}

pub fn time_to_collision(log: &TrajectoryLog, cfg: &ScoringConfig) -> Ttc {
    if !log.has_lead() {
        return Ttc::NotApplicable;
    }
    log.samples
        .iter()
        .filter_map(|s| {
            let (gap, v_lead) = lane_gap(s, cfg)?;
            ttc(gap, s.v * s.psi.cos(), v_lead)
        })
        .min_by(f64::total_cmp)
        .map_or(Ttc::Unbounded, Ttc::Seconds)
}

/// Whether the ego and lead footprints (`vehicle_length` × `vehicle_width`
/// rectangles centred on the logged positions) intersect. The lead is
/// aligned with +x; the ego is rotated by its heading. Separating-axis test.
fn footprints_overlap(s: &TrajectorySample, cfg: &ScoringConfig) -> bool {
    let Some(lead) = s.lead else {
        return false;
    };
    let (hl, hw) = (0.5 * cfg.vehicle_length, 0.5 * cfg.vehicle_width);
    let (sin, cos) = s.psi.sin_cos();
    let ego_axes = [(cos, sin), (-sin, cos)];
    let lead_axes = [(1.0, 0.0), (0.0, 1.0)];
    let d = (lead.x - s.x, lead.y - s.y);
    let dot = |a: (f64, f64), b: (f64, f64)| a.0 * b.0 + a.1 * b.1;
    let extent = |axes: &[(f64, f64); 2], u: (f64, f64)| hl * dot(axes[0], u).abs() + hw * dot(axes[1], u).abs();
    ego_axes
        .iter()
        .chain(&lead_axes)
        .all(|&u| dot(d, u).abs() < extent(&ego_axes, u) + extent(&lead_axes, u))
}

/// Steps at which the ego footprint intersects the lead's.
pub fn collision_steps(log: &TrajectoryLog, cfg: &ScoringConfig) -> usize {
    log.samples.iter().filter(|s| footprints_overlap(s, cfg)).count()
}
