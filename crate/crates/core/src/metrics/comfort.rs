use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::sim::TrajectoryLog;

/// Speed variances and mean absolute accelerations and jerks, split into the
/// along-path (`x`) and lateral (`y`) directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortMetrics {
    pub sv_x: f64,
    pub sv_y: f64,
    pub mean_abs_ax: f64,
    pub mean_abs_ay: f64,
    pub mean_abs_jx: f64,
    pub mean_abs_jy: f64,
}

/// Central differences inside, one-sided at the ends.
pub fn gradient(xs: &[f64], dt: f64) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|k| match k {
            0 => (xs[1] - xs[0]) / dt,
            k if k == n - 1 => (xs[k] - xs[k - 1]) / dt,
            k => (xs[k + 1] - xs[k - 1]) / (2.0 * dt),
        })
        .collect()
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn mean_abs(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x.abs(), n + 1));
    sum / n as f64
}

/// Velocity components are projected on the reference heading at each step.
/// Accelerations and jerks are differentiated in the world frame and then
/// projected, so the lateral channel includes the centripetal term and every
/// metric is invariant under rigid motions of the whole run.
pub fn comfort_metrics(log: &TrajectoryLog) -> Result<ComfortMetrics, MetricError> {
    let s = &log.samples;
    if s.len() < 3 {
        return Err(MetricError::TooShort(s.len()));
    }
    let dt = log.dt;
    let rel: Vec<f64> = s.iter().map(|p| p.psi - p.ref_psi).collect();
    let vx: Vec<f64> = s.iter().zip(&rel).map(|(p, r)| p.v * r.cos()).collect();
    let vy: Vec<f64> = s.iter().zip(&rel).map(|(p, r)| p.v * r.sin()).collect();

    let wvx: Vec<f64> = s.iter().map(|p| p.v * p.psi.cos()).collect();
    let wvy: Vec<f64> = s.iter().map(|p| p.v * p.psi.sin()).collect();
    let (wax, way) = (gradient(&wvx, dt), gradient(&wvy, dt));
    let (wjx, wjy) = (gradient(&wax, dt), gradient(&way, dt));

    // (along, lateral) components of a world vector at step k.
    let project = |k: usize, wx: f64, wy: f64| {
        let (sn, cs) = s[k].ref_psi.sin_cos();
        (wx * cs + wy * sn, -wx * sn + wy * cs)
    };
    let acc: Vec<(f64, f64)> = (0..s.len()).map(|k| project(k, wax[k], way[k])).collect();
    let jerk: Vec<(f64, f64)> = (0..s.len()).map(|k| project(k, wjx[k], wjy[k])).collect();

    Ok(ComfortMetrics {
        sv_x: population_variance(&vx),
        sv_y: population_variance(&vy),
        mean_abs_ax: mean_abs(acc.iter().map(|a| a.0)),
        mean_abs_ay: mean_abs(acc.iter().map(|a| a.1)),
        mean_abs_jx: mean_abs(jerk.iter().map(|j| j.0)),
        mean_abs_jy: mean_abs(jerk.iter().map(|j| j.1)),
    })
}
