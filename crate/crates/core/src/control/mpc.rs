//! Lateral MPC on a two-state error model (lateral offset, heading error)
//! linearized about the reference speed and the path's curvature
//! feed-forward steering.
//!
//! Decision variables are the steering deviations `u_k = δ_k − δ_ref,k` over
//! the horizon; the cost is `Σ e_kᵀ Q e_k + Σ w_s u_k²` with
//! `Q = diag(w_l, w_h)`, constant across the horizon and no terminal term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem};
use super::ControlError;
use crate::sim::{wrap_angle, PlantConfig, ReferencePath, VehicleState};

/// Lateral, heading and steering-effort weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub w_l: f64,
    pub w_h: f64,
    pub w_s: f64,
}

impl MpcWeights {
    pub fn new(w_l: f64, w_h: f64, w_s: f64) -> Self {
        Self { w_l, w_h, w_s }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if [self.w_l, self.w_h, self.w_s]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
        {
            Ok(())
        } else {
            Err(ControlError::InvalidInput(format!(
                "MPC weights must be finite and positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub wheelbase: f64,
    pub steer_max: f64,
    pub steer_rate_max: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self::from_plant(&PlantConfig::default(), 0.05)
    }
}

impl MpcConfig {
    pub fn from_plant(plant: &PlantConfig, dt: f64) -> Self {
        Self {
            horizon: 20,
            dt,
            wheelbase: plant.wheelbase,
            steer_max: plant.steer_max,
            steer_rate_max: plant.steer_rate_max,
        }
    }
}

/// Linear time-varying error dynamics `e_{k+1} = A_k e_k + B_k u_k` with
/// quadratic stage cost and box bounds on `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub dt: f64,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub q: DMatrix<f64>,
    pub r: f64,
    pub e0: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Curvature feed-forward steering per step; added back to `u`.
    pub feedforward: Vec<f64>,
}

impl MpcProblem {
    pub fn validate(&self) -> Result<(), ControlError> {
        let n = self.e0.len();
        let ok = self.horizon >= 1
            && self.a.len() == self.horizon
            && self.b.len() == self.horizon
            && self.a.iter().all(|a| a.shape() == (n, n))
            && self.b.iter().all(|b| b.len() == n)
            && self.q.shape() == (n, n)
            && self.lower.len() == self.horizon
            && self.upper.len() == self.horizon;
        if !ok {
            return Err(ControlError::InvalidInput("inconsistent MPC dimensions".into()));
        }
        let finite = self
            .a
            .iter()
            .flat_map(|m| m.iter())
            .chain(self.b.iter().flat_map(|b| b.iter()))
            .chain(self.q.iter())
            .chain(self.e0.iter())
            .all(|v| v.is_finite())
            && self.r.is_finite();
        if !finite {
            return Err(ControlError::NonFinite("MPC model".into()));
        }
        if !(self.r > 0.0) {
            return Err(ControlError::InvalidInput("input weight must be positive".into()));
        }
        Ok(())
    }
}

/// Output of one MPC solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcOutput {
    pub delta: f64,
    pub feedforward: f64,
    pub lateral_error: f64,
    pub heading_error: f64,
    pub iterations: usize,
    pub residual: f64,
}

pub fn build_mpc_problem(
    weights: &MpcWeights,
    state: &VehicleState,
    path: &ReferencePath,
    config: &MpcConfig,
) -> Result<MpcProblem, ControlError> {
    weights.validate()?;
    if config.horizon == 0 || !(config.dt > 0.0) || !(config.wheelbase > 0.0) {
        return Err(ControlError::InvalidInput("invalid MPC config".into()));
    }
    let proj = path.project(state.x, state.y);
    if proj.beyond_end {
        return Err(ControlError::PathExhausted { s: proj.s, length: path.length() });
    }
    let v = proj.v_ref.max(0.0);
    let n = config.horizon;
    let dt = config.dt;
    let lookahead = proj.s + v * n as f64 * dt;
    if lookahead > path.length() {
        return Err(ControlError::PathExhausted { s: lookahead, length: path.length() });
    }

    let l = config.wheelbase;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut feedforward = Vec::with_capacity(n);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for k in 0..n {
        let kappa = path.curvature_at(proj.s + v * k as f64 * dt);
        let ff = (l * kappa).atan();
        let gain = v / (l * ff.cos().powi(2));
        a.push(DMatrix::from_row_slice(2, 2, &[1.0, v * dt, 0.0, 1.0]));
        b.push(DVector::from_vec(vec![0.5 * v * gain * dt * dt, gain * dt]));

        let reach = config.steer_rate_max * dt * (k + 1) as f64;
        let lo = (-config.steer_max).max(state.delta_f - reach);
        let hi = config.steer_max.min(state.delta_f + reach);
        lower[k] = lo - ff;
        upper[k] = hi.max(lo) - ff;
        feedforward.push(ff);
    }

    let problem = MpcProblem {
        horizon: n,
        dt,
        a,
        b,
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![weights.w_l, weights.w_h])),
        r: weights.w_s,
        e0: DVector::from_vec(vec![proj.lateral, wrap_angle(state.psi - proj.heading)]),
        lower,
        upper,
        feedforward,
    };
    problem.validate()?;
    Ok(problem)
}

/// Eliminates the states by forward substitution.
///
/// With `E = F e0 + Γ u`, the cost `J = EᵀQ̄E + uᵀR̄u` equals
/// `2 (½ uᵀHu + gᵀu) + const` for `H = ΓᵀQ̄Γ + R̄` and `g = ΓᵀQ̄ F e0`.
pub fn condense_to_qp(problem: &MpcProblem) -> Result<QpProblem, ControlError> {
    problem.validate()?;
    let n = problem.horizon;
    let nx = problem.e0.len();

    let mut h = DMatrix::from_diagonal_element(n, n, problem.r);
    let mut g = DVector::zeros(n);
    // Sensitivity of the current predicted state to every input.
    let mut gamma = DMatrix::<f64>::zeros(nx, n);
    let mut free = problem.e0.clone();
    for k in 0..n {
        gamma = &problem.a[k] * &gamma;
        gamma.set_column(k, &(gamma.column(k) + &problem.b[k]));
        free = &problem.a[k] * &free;
        let qg = &problem.q * &gamma;
        h += gamma.transpose() * &qg;
        g += gamma.transpose() * (&problem.q * &free);
    }
    let h = (&h + h.transpose()) * 0.5;
    QpProblem::new(h, g, problem.lower.clone(), problem.upper.clone()).map_err(ControlError::from)
}

pub fn mpc_step(
    weights: &MpcWeights,
    state: &VehicleState,
    path: &ReferencePath,
    config: &MpcConfig,
) -> Result<MpcOutput, ControlError> {
    let problem = build_mpc_problem(weights, state, path, config)?;
    let qp = condense_to_qp(&problem)?;
    let sol = solve_qp(&qp)?;
    let ff = problem.feedforward[0];
    Ok(MpcOutput {
        delta: (ff + sol.x[0]).clamp(-config.steer_max, config.steer_max),
        feedforward: ff,
        lateral_error: problem.e0[0],
        heading_error: problem.e0[1],
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::qp::solve_qp;
    use crate::sim::Waypoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight() -> ReferencePath {
        ReferencePath::new(
            (0..200)
                .map(|i| Waypoint { x: i as f64, y: 0.0, v_ref: 10.0 })
                .collect(),
        )
        .unwrap()
    }

    fn arc(r: f64) -> ReferencePath {
        let n = (r * std::f64::consts::PI).round() as usize;
        ReferencePath::new(
            (0..=n)
                .map(|i| {
                    let th = i as f64 / r;
                    Waypoint { x: r * th.sin(), y: r * (1.0 - th.cos()), v_ref: 8.333 }
                })
                .collect(),
        )
        .unwrap()
    }

    fn moderate() -> MpcWeights {
        MpcWeights::new(5.0, 8.0, 1.0)
    }

    /// J evaluated by direct rollout of the error dynamics.
    fn rollout_cost(p: &MpcProblem, u: &DVector<f64>) -> f64 {
        let mut e = p.e0.clone();
        let mut j = 0.0;
        for k in 0..p.horizon {
            e = &p.a[k] * &e + &p.b[k] * u[k];
            j += e.dot(&(&p.q * &e)) + p.r * u[k] * u[k];
        }
        j
    }

    fn scalar_problem(b: f64, q: f64, r: f64, e0: f64, n: usize) -> MpcProblem {
        MpcProblem {
            horizon: n,
            dt: 1.0,
            a: vec![DMatrix::identity(1, 1); n],
            b: vec![DVector::from_element(1, b); n],
            q: DMatrix::from_element(1, 1, q),
            r,
            e0: DVector::from_element(1, e0),
            lower: DVector::from_element(n, -1e3),
            upper: DVector::from_element(n, 1e3),
            feedforward: vec![0.0; n],
        }
    }

    #[test]
    fn aligned_on_path_has_zero_error() {
        let s = VehicleState::at_rest(20.0, 0.0, 0.0).with_speed(10.0);
        let p = build_mpc_problem(&moderate(), &s, &straight(), &MpcConfig::default()).unwrap();
        assert_eq!(p.e0.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn lateral_offset_left_is_positive() {
        let s = VehicleState::at_rest(20.0, 0.5, 0.0).with_speed(10.0);
        let p = build_mpc_problem(&moderate(), &s, &straight(), &MpcConfig::default()).unwrap();
        assert!((p.e0[0] - 0.5).abs() < 1e-12);
        assert_eq!(p.e0[1], 0.0);
    }

    #[test]
    fn beyond_end_is_path_exhausted() {
        let s = VehicleState::at_rest(250.0, 0.0, 0.0).with_speed(10.0);
        let r = build_mpc_problem(&moderate(), &s, &straight(), &MpcConfig::default());
        assert!(matches!(r, Err(ControlError::PathExhausted { .. })));
        // Too little path left for the horizon.
        let s = VehicleState::at_rest(195.0, 0.0, 0.0).with_speed(10.0);
        let r = build_mpc_problem(&moderate(), &s, &straight(), &MpcConfig::default());
        assert!(matches!(r, Err(ControlError::PathExhausted { .. })));
    }

    #[test]
    fn one_step_condensing() {
        let (b, q, r, e0) = (0.7, 3.0, 0.5, 1.3);
        let qp = condense_to_qp(&scalar_problem(b, q, r, e0, 1)).unwrap();
        assert!((qp.h[(0, 0)] - (q * b * b + r)).abs() < 1e-12);
        assert!((qp.g[0] - q * b * e0).abs() < 1e-12);
    }

    #[test]
    fn input_weight_only_shifts_diagonal() {
        let s = VehicleState::at_rest(20.0, 0.4, 0.05).with_speed(10.0);
        let cfg = MpcConfig::default();
        let w1 = moderate();
        let w10 = MpcWeights { w_s: w1.w_s * 10.0, ..w1 };
        let h1 = condense_to_qp(&build_mpc_problem(&w1, &s, &straight(), &cfg).unwrap()).unwrap();
        let h10 = condense_to_qp(&build_mpc_problem(&w10, &s, &straight(), &cfg).unwrap()).unwrap();
        let diff = &h10.h - &h1.h;
        let expected = DMatrix::from_diagonal_element(cfg.horizon, cfg.horizon, 9.0 * w1.w_s);
        assert!((diff - expected).amax() < 1e-9);
        assert!((h10.g - h1.g).amax() < 1e-12);
    }

    #[test]
    fn hessian_matches_finite_differences_of_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 3;
            let mk = |rng: &mut ChaCha8Rng| {
                DMatrix::from_fn(2, 2, |i, j| if i == j { rng.random_range(0.5..0.95) } else { rng.random_range(-0.3..0.3) })
            };
            let p = MpcProblem {
                horizon: n,
                dt: 0.1,
                a: (0..n).map(|_| mk(&mut rng)).collect(),
                b: (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect(),
                q: DMatrix::from_diagonal(&DVector::from_vec(vec![rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)])),
                r: rng.random_range(0.1..2.0),
                e0: DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)),
                lower: DVector::from_element(n, -1.0),
                upper: DVector::from_element(n, 1.0),
                feedforward: vec![0.0; n],
            };
            let qp = condense_to_qp(&p).unwrap();
            let u0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            let h = 1e-3;
            for i in 0..n {
                for j in 0..n {
                    let shifted = |di: f64, dj: f64| {
                        let mut u = u0.clone();
                        u[i] += di;
                        u[j] += dj;
                        rollout_cost(&p, &u)
                    };
                    let fd = (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h);
                    // J = 2 * (½ uᵀHu + gᵀu) + const, so ∂²J = 2H.
                    assert!((fd / 2.0 - qp.h[(i, j)]).abs() < 1e-6, "H[{i},{j}]");
                }
                let fd_grad = (rollout_cost(&p, &{
                    let mut u = u0.clone();
                    u[i] += h;
                    u
                }) - rollout_cost(&p, &{
                    let mut u = u0.clone();
                    u[i] -= h;
                    u
                })) / (2.0 * h);
                let grad = (&qp.h * &u0 + &qp.g)[i];
                assert!((fd_grad / 2.0 - grad).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn straight_road_on_path_gives_zero_steer() {
        let s = VehicleState::at_rest(20.0, 0.0, 0.0).with_speed(10.0);
        let out = mpc_step(&moderate(), &s, &straight(), &MpcConfig::default()).unwrap();
        assert_eq!(out.delta, 0.0);
    }

    #[test]
    fn arc_on_path_gives_feedforward() {
        let r = 23.89;
        let path = arc(r);
        let expected = (2.79f64 / r).atan();
        assert!((expected - 0.1163).abs() < 1e-4);
        // Ego on a waypoint, tangent to the arc, already holding the turn.
        let th = 10.0 / r;
        let mut s = VehicleState::at_rest(r * th.sin(), r * (1.0 - th.cos()), th).with_speed(8.333);
        s.delta_f = expected;
        let out = mpc_step(&moderate(), &s, &path, &MpcConfig::default()).unwrap();
        assert!((out.feedforward - expected).abs() < 1e-6);
        assert!((out.delta - expected).abs() < 1e-4, "delta {}", out.delta);
    }

    #[test]
    fn heavier_lateral_weight_corrects_harder() {
        let s = VehicleState::at_rest(20.0, 0.5, 0.0).with_speed(10.0);
        let cfg = MpcConfig::default();
        let soft = mpc_step(&MpcWeights::new(1.0, 8.0, 1.0), &s, &straight(), &cfg).unwrap();
        let hard = mpc_step(&MpcWeights::new(10.0, 8.0, 1.0), &s, &straight(), &cfg).unwrap();
        assert!(soft.delta < 0.0, "offset to the left must steer right");
        assert!(hard.delta.abs() >= soft.delta.abs());

        // Same ordering from the unconstrained condensed QP.
        let p1 = condense_to_qp(&build_mpc_problem(&MpcWeights::new(1.0, 8.0, 1.0), &s, &straight(), &cfg).unwrap()).unwrap();
        let p10 = condense_to_qp(&build_mpc_problem(&MpcWeights::new(10.0, 8.0, 1.0), &s, &straight(), &cfg).unwrap()).unwrap();
        let x1 = solve_qp(&p1).unwrap().x;
        let x10 = solve_qp(&p10).unwrap().x;
        assert!(x10[0].abs() >= x1[0].abs());
    }

    #[test]
    fn invalid_weights_rejected() {
        let s = VehicleState::at_rest(20.0, 0.0, 0.0).with_speed(10.0);
        let r = build_mpc_problem(&MpcWeights::new(1.0, 1.0, 0.0), &s, &straight(), &MpcConfig::default());
        assert!(matches!(r, Err(ControlError::InvalidInput(_))));
    }

    #[test]
    fn regularization_never_increases_input_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MpcConfig::default();
        for _ in 0..50 {
            let s = VehicleState {
                x: rng.random_range(5.0..50.0),
                y: rng.random_range(-1.5..1.5),
                psi: rng.random_range(-0.3..0.3),
                v: 10.0,
                a: 0.0,
                delta_f: rng.random_range(-0.2..0.2),
                t: 0.0,
            };
            let w = MpcWeights::new(rng.random_range(0.5..20.0), rng.random_range(1.0..30.0), rng.random_range(0.1..5.0));
            let c = rng.random_range(1.01..20.0);
            let wc = MpcWeights { w_s: w.w_s * c, ..w };
            let x = solve_qp(&condense_to_qp(&build_mpc_problem(&w, &s, &straight(), &cfg).unwrap()).unwrap()).unwrap().x;
            let xc = solve_qp(&condense_to_qp(&build_mpc_problem(&wc, &s, &straight(), &cfg).unwrap()).unwrap()).unwrap().x;
            assert!(xc.norm() <= x.norm() + 1e-9);
        }
    }
}
