use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Planar pose and actuator state of one vehicle.
///
/// The reference point is the rear axle, so the kinematic bicycle model has
/// no lateral slip at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in (-π, π].
    pub psi: f64,
    pub v: f64,
    pub a: f64,
    pub delta_f: f64,
    pub t: f64,
}

impl VehicleState {
    pub fn at_rest(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
            v: 0.0,
            a: 0.0,
            delta_f: 0.0,
            t: 0.0,
        }
    }

    pub fn with_speed(mut self, v: f64) -> Self {
        self.v = v;
        self
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.v, self.a, self.delta_f, self.t]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Geometry and actuator limits of the simulated ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub wheelbase: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub steer_rate_max: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.79,
            accel_max: 3.0,
            steer_max: 0.6,
            steer_rate_max: 0.5,
            length: 4.5,
            width: 1.85,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = [
            self.wheelbase,
            self.accel_max,
            self.steer_max,
            self.steer_rate_max,
            self.length,
            self.width,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SimError::Config("plant limits must be finite and positive".into()))
        }
    }

    /// Clamps a steering command to the rate and magnitude limits, given the
    /// currently applied angle.
    pub fn limit_steering(&self, current: f64, command: f64, dt: f64) -> f64 {
        let step = self.steer_rate_max * dt;
        command
            .clamp(current - step, current + step)
            .clamp(-self.steer_max, self.steer_max)
    }

    pub fn limit_accel(&self, command: f64) -> f64 {
        command.clamp(-self.accel_max, self.accel_max)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Advances the kinematic bicycle model by one explicit-Euler step.
///
/// Position integrates with the heading and speed at the start of the step;
/// heading integrates with the applied (limited) steering angle.
pub fn step_plant(
    config: &PlantConfig,
    state: &VehicleState,
    a_cmd: f64,
    delta_cmd: f64,
    dt: f64,
) -> Result<VehicleState, SimError> {
    if !state.is_finite() || !a_cmd.is_finite() || !delta_cmd.is_finite() || !dt.is_finite() {
        return Err(SimError::InvalidState("non-finite plant input".into()));
    }
    if dt <= 0.0 {
        return Err(SimError::InvalidState(format!("dt must be positive, got {dt}")));
    }

    let a = config.limit_accel(a_cmd);
    let delta = config.limit_steering(state.delta_f, delta_cmd, dt);

    let x = state.x + state.v * state.psi.cos() * dt;
    let y = state.y + state.v * state.psi.sin() * dt;
    let psi = wrap_angle(state.psi + state.v / config.wheelbase * delta.tan() * dt);
    let v = (state.v + a * dt).max(0.0);
    // Report the acceleration that actually happened, which differs from the
    // command when the standstill clamp engages.
    let a_eff = (v - state.v) / dt;

    Ok(VehicleState {
        x,
        y,
        psi,
        v,
        a: a_eff,
        delta_f: delta,
        t: state.t + dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn straight_line_coasting() {
        let s = VehicleState::at_rest(0.0, 0.0, 0.0).with_speed(10.0);
        let n = step_plant(&cfg(), &s, 0.0, 0.0, 0.1).unwrap();
        assert!((n.x - 1.0).abs() < 1e-12);
        assert_eq!(n.y, 0.0);
        assert_eq!(n.psi, 0.0);
        assert_eq!(n.v, 10.0);
        assert!((n.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn standstill_clamp() {
        let s = VehicleState::at_rest(0.0, 0.0, 0.0);
        let n = step_plant(&cfg(), &s, -1.0, 0.0, 0.1).unwrap();
        assert_eq!(n.v, 0.0);
        assert_eq!(n.x, 0.0);
        assert_eq!(n.a, 0.0);
    }

    #[test]
    fn zero_command_from_rest_is_fixed_point() {
        let mut s = VehicleState::at_rest(3.0, -2.0, 1.0);
        for _ in 0..100 {
            let n = step_plant(&cfg(), &s, 0.0, 0.0, 0.05).unwrap();
            assert_eq!((n.x, n.y, n.psi, n.v), (s.x, s.y, s.psi, s.v));
            s = n;
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = VehicleState::at_rest(0.0, 0.0, 0.0);
        assert!(matches!(
            step_plant(&cfg(), &s, f64::NAN, 0.0, 0.1),
            Err(SimError::InvalidState(_))
        ));
        let mut bad = s;
        bad.x = f64::INFINITY;
        assert!(step_plant(&cfg(), &bad, 0.0, 0.0, 0.1).is_err());
        assert!(step_plant(&cfg(), &s, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn actuator_limits_applied() {
        let c = cfg();
        let s = VehicleState::at_rest(0.0, 0.0, 0.0).with_speed(5.0);
        let n = step_plant(&c, &s, 10.0, 1.0, 0.1).unwrap();
        assert!((n.v - 5.3).abs() < 1e-12);
        assert!((n.delta_f - 0.05).abs() < 1e-12);

        let mut s = s;
        for _ in 0..100 {
            s = step_plant(&c, &s, 0.0, 1.0, 0.1).unwrap();
        }
        assert!((s.delta_f - c.steer_max).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }
}
