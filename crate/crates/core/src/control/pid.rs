use serde::{Deserialize, Serialize};

use super::ControlError;

/// Longitudinal PID gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

/// Discrete integrator and last error of the velocity loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    /// Anti-windup clamp on the accumulated `error * dt`.
    pub integral_max: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { integral_max: 10.0 }
    }
}

/// One step of the velocity PID law.
///
/// `a = kp*e + ki*sum(e*dt) + kd*(e - e_prev)/dt`; the derivative term is zero
/// on the first call.
pub fn pid_step(
    gains: &PidGains,
    state: &PidState,
    v_ref: f64,
    v_current: f64,
    dt: f64,
    config: &PidConfig,
) -> Result<(f64, PidState), ControlError> {
    let inputs = [gains.kp, gains.ki, gains.kd, v_ref, v_current, dt, state.integral, state.prev_error];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::NonFinite("pid input".into()));
    }
    if dt <= 0.0 {
        return Err(ControlError::InvalidInput(format!("dt must be positive, got {dt}")));
    }

    let error = v_ref - v_current;
    let limit = config.integral_max.abs();
    let integral = (state.integral + error * dt).clamp(-limit, limit);
    let derivative = if state.initialized {
        (error - state.prev_error) / dt
    } else {
        0.0
    };
    let a = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    Ok((
        a,
        PidState {
            integral,
            prev_error: error,
            initialized: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(gains: PidGains, errors: &[f64], dt: f64) -> Vec<f64> {
        let mut st = PidState::default();
        errors
            .iter()
            .map(|e| {
                let (a, n) = pid_step(&gains, &st, *e, 0.0, dt, &PidConfig::default()).unwrap();
                st = n;
                a
            })
            .collect()
    }

    #[test]
    fn pure_proportional() {
        let (a, _) = pid_step(
            &PidGains::new(1.0, 0.0, 0.0),
            &PidState::default(),
            10.0,
            8.0,
            0.05,
            &PidConfig::default(),
        )
        .unwrap();
        assert_eq!(a, 2.0);
    }

    #[test]
    fn integral_accumulates() {
        let a = run(PidGains::new(0.0, 0.5, 0.0), &[2.0, 2.0], 0.1);
        assert!((a[0] - 0.1).abs() < 1e-12);
        assert!((a[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn full_law_hand_evaluated() {
        // integral = (2.0 + 1.5 + 1.0) * 0.1 = 0.45, derivative = (1.0 - 1.5) / 0.1 = -5
        let a = run(PidGains::new(1.0, 0.1, 0.05), &[2.0, 1.5, 1.0], 0.1);
        assert!((a[2] - 0.795).abs() < 1e-12);
        // derivative suppressed on the first sample
        assert!((a[0] - (2.0 + 0.1 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let r = pid_step(
            &PidGains::new(1.0, 0.0, 0.0),
            &PidState::default(),
            f64::NAN,
            0.0,
            0.1,
            &PidConfig::default(),
        );
        assert!(matches!(r, Err(ControlError::NonFinite(_))));
    }

    proptest! {
        #[test]
        fn proportional_is_linear(e in -50.0f64..50.0, c in -20.0f64..20.0, kp in 0.0f64..5.0) {
            let g = PidGains::new(kp, 0.0, 0.0);
            let cfg = PidConfig::default();
            let (a1, _) = pid_step(&g, &PidState::default(), e, 0.0, 0.05, &cfg).unwrap();
            let (ac, _) = pid_step(&g, &PidState::default(), c * e, 0.0, 0.05, &cfg).unwrap();
            prop_assert!((ac - c * a1).abs() <= 1e-9 * (1.0 + ac.abs()));
        }

        #[test]
        fn integral_never_exceeds_clamp(errors in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let cfg = PidConfig::default();
            let g = PidGains::new(0.5, 0.2, 0.1);
            let mut st = PidState::default();
            for e in errors {
                let (_, n) = pid_step(&g, &st, e, 0.0, 0.05, &cfg).unwrap();
                prop_assert!(n.integral.abs() <= cfg.integral_max);
                st = n;
            }
        }
    }
}
