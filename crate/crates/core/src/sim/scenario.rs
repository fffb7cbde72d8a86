use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::path::{ReferencePath, Waypoint};
use super::plant::VehicleState;
use super::SimError;

/// km/h to m/s.
pub fn kmh(v: f64) -> f64 {
    v / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Acceleration,
    LaneChange,
    LeftTurn,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [Self::Acceleration, Self::LaneChange, Self::LeftTurn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Acceleration => "acceleration",
            Self::LaneChange => "lane-change",
            Self::LeftTurn => "left-turn",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "acceleration" | "accel" => Ok(Self::Acceleration),
            "lane-change" | "lanechange" => Ok(Self::LaneChange),
            "left-turn" | "leftturn" | "turn" => Ok(Self::LeftTurn),
            other => Err(SimError::Config(format!("unknown scenario kind '{other}'"))),
        }
    }
}

/// Kinematics of the scripted lead vehicle.
///
/// The lead drives along the +x axis, `lateral_offset` metres to the left of
/// the ego's starting lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadSpec {
    pub initial_gap: f64,
    pub accel: f64,
    pub v_max: f64,
    pub lateral_offset: f64,
}

/// Tunables for the three scenario builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub acceleration_duration: f64,
    pub lane_change_duration: f64,
    pub left_turn_duration: f64,
    pub ego_target_speed: f64,
    pub lead_gap: f64,
    pub lead_accel: f64,
    pub lead_speed_max: f64,
    /// Lane the lead occupies in the acceleration scenario, as a lateral
    /// offset from the ego lane.
    pub acceleration_lead_offset: f64,
    pub lane_width: f64,
    /// Time at which the lateral blend of the lane change starts.
    pub lane_change_start: f64,
    /// Duration of the quintic lateral blend.
    pub lane_change_blend: f64,
    pub turn_radius: f64,
    pub turn_speed: f64,
    /// Swept angle of the turn arc; the path continues straight afterwards.
    pub turn_angle: f64,
    pub waypoint_spacing: f64,
    /// Extra path length beyond the distance covered in `duration`.
    pub path_margin: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            acceleration_duration: 20.0,
            lane_change_duration: 15.0,
            left_turn_duration: 18.1,
            ego_target_speed: kmh(50.0),
            lead_gap: 30.0,
            lead_accel: 1.26,
            lead_speed_max: kmh(45.0),
            acceleration_lead_offset: 3.5,
            lane_width: 3.5,
            lane_change_start: 0.0,
            lane_change_blend: 4.0,
            turn_radius: 23.89,
            turn_speed: kmh(30.0),
            turn_angle: FRAC_PI_2,
            waypoint_spacing: 1.0,
            path_margin: 40.0,
        }
    }
}

/// A fully specified scenario: reference path, lead kinematics, timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub ref_waypoints: Vec<Waypoint>,
    pub lead: Option<LeadSpec>,
    pub ego_v_target: f64,
    pub turn_radius: Option<f64>,
    pub dt: f64,
    pub duration: f64,
    pub ego_initial: VehicleState,
}

impl ScenarioSpec {
    pub fn lead_present(&self) -> bool {
        self.lead.is_some()
    }

    /// Number of control steps in one run.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn reference_path(&self) -> Result<ReferencePath, SimError> {
        ReferencePath::new(self.ref_waypoints.clone())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= self.dt) {
            return Err(SimError::Config("duration must be at least one step".into()));
        }
        if self.ref_waypoints.is_empty() {
            return Err(SimError::Config("reference waypoints are empty".into()));
        }
        if let Some(lead) = &self.lead {
            if !(lead.accel > 0.0 && lead.v_max > 0.0 && lead.initial_gap.is_finite()) {
                return Err(SimError::Config("lead kinematics must be positive".into()));
            }
        }
        self.reference_path().map(|_| ())
    }
}

impl ScenarioConfig {
    fn path_length(&self, speed: f64, duration: f64) -> f64 {
        speed * duration + self.path_margin
    }

    fn straight(&self, length: f64, speed: f64, lateral: impl Fn(f64) -> f64) -> Vec<Waypoint> {
        let n = (length / self.waypoint_spacing).ceil() as usize;
        (0..=n)
            .map(|i| {
                let x = i as f64 * self.waypoint_spacing;
                Waypoint {
                    x,
                    y: lateral(x),
                    v_ref: speed,
                }
            })
            .collect()
    }

    fn lead(&self, lateral_offset: f64) -> LeadSpec {
        LeadSpec {
            initial_gap: self.lead_gap,
            accel: self.lead_accel,
            v_max: self.lead_speed_max,
            lateral_offset,
        }
    }
}

/// Quintic blend with zero slope and curvature at both ends.
pub fn quintic_blend(xi: f64) -> f64 {
    let xi = xi.clamp(0.0, 1.0);
    xi.powi(3) * (10.0 - 15.0 * xi + 6.0 * xi * xi)
}

pub fn build_scenario(kind: ScenarioKind, config: &ScenarioConfig) -> Result<ScenarioSpec, SimError> {
    let c = config;
    if !(c.waypoint_spacing > 0.0 && c.dt > 0.0) {
        return Err(SimError::Config("waypoint spacing and dt must be positive".into()));
    }
    let spec = match kind {
        ScenarioKind::Acceleration => {
            let v = c.ego_target_speed;
            ScenarioSpec {
                kind,
                ref_waypoints: c.straight(c.path_length(v, c.acceleration_duration), v, |_| 0.0),
                lead: Some(c.lead(c.acceleration_lead_offset)),
                ego_v_target: v,
                turn_radius: None,
                dt: c.dt,
                duration: c.acceleration_duration,
                ego_initial: VehicleState::at_rest(0.0, 0.0, 0.0),
            }
        }
        ScenarioKind::LaneChange => {
            let v = c.ego_target_speed;
            let x0 = v * c.lane_change_start;
            let span = v * c.lane_change_blend;
            let width = c.lane_width;
            ScenarioSpec {
                kind,
                ref_waypoints: c.straight(c.path_length(v, c.lane_change_duration), v, |x| {
                    width * quintic_blend((x - x0) / span)
                }),
                lead: Some(c.lead(0.0)),
                ego_v_target: v,
                turn_radius: None,
                dt: c.dt,
                duration: c.lane_change_duration,
                ego_initial: VehicleState::at_rest(0.0, 0.0, 0.0).with_speed(v),
            }
        }
        ScenarioKind::LeftTurn => {
            let v = c.turn_speed;
            let r = c.turn_radius;
            if !(r > 0.0) {
                return Err(SimError::Config("turn radius must be positive".into()));
            }
            let arc_len = r * c.turn_angle;
            let total = c.path_length(v, c.left_turn_duration).max(arc_len + c.waypoint_spacing);
            let n_arc = (arc_len / c.waypoint_spacing).round().max(1.0) as usize;
            let dtheta = c.turn_angle / n_arc as f64;
            let mut pts: Vec<Waypoint> = (0..=n_arc)
                .map(|i| {
                    let th = i as f64 * dtheta;
                    Waypoint {
                        x: r * th.sin(),
                        y: r * (1.0 - th.cos()),
                        v_ref: v,
                    }
                })
                .collect();
            let end = *pts.last().unwrap();
            let (hx, hy) = (c.turn_angle.cos(), c.turn_angle.sin());
            let n_exit = ((total - arc_len) / c.waypoint_spacing).ceil() as usize;
            pts.extend((1..=n_exit).map(|i| {
                let d = i as f64 * c.waypoint_spacing;
                Waypoint {
                    x: end.x + d * hx,
                    y: end.y + d * hy,
                    v_ref: v,
                }
            }));
            ScenarioSpec {
                kind,
                ref_waypoints: pts,
                lead: None,
                ego_v_target: v,
                turn_radius: Some(r),
                dt: c.dt,
                duration: c.left_turn_duration,
                ego_initial: VehicleState::at_rest(0.0, 0.0, 0.0).with_speed(v),
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Closed-form lead kinematics: constant acceleration from rest, then
/// constant speed once `v_max` is reached.
pub fn lead_state(spec: &ScenarioSpec, t: f64) -> Result<VehicleState, SimError> {
    let lead = spec
        .lead
        .as_ref()
        .ok_or_else(|| SimError::Scenario(format!("{} scenario has no lead vehicle", spec.kind)))?;
    if !(t >= 0.0) {
        return Err(SimError::Scenario(format!("lead queried at negative time {t}")));
    }
    let t_sat = lead.v_max / lead.accel;
    let (x, v, a) = if t <= t_sat {
        (0.5 * lead.accel * t * t, lead.accel * t, lead.accel)
    } else {
        (
            0.5 * lead.accel * t_sat * t_sat + lead.v_max * (t - t_sat),
            lead.v_max,
            0.0,
        )
    };
    Ok(VehicleState {
        x: spec.ego_initial.x + lead.initial_gap + x,
        y: spec.ego_initial.y + lead.lateral_offset,
        psi: 0.0,
        v,
        a,
        delta_f: 0.0,
        t,
    })
}
