use serde::{Deserialize, Serialize};

use super::plant::wrap_angle;
use super::SimError;

/// One reference sample: position and target speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub v_ref: f64,
}

/// Ego pose expressed relative to the reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the path.
    pub lateral: f64,
    /// Path tangent heading at the foot point.
    pub heading: f64,
    pub curvature: f64,
    pub v_ref: f64,
    /// The ego lies past the last waypoint.
    pub beyond_end: bool,
}

/// Polyline reference with per-waypoint tangent heading and curvature.
///
/// Tangents come from central chords and curvature from the circle through
/// three consecutive samples, both of which are exact for samples taken on a
/// circular arc.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<Waypoint>,
    arc: Vec<f64>,
    heading: Vec<f64>,
    curvature: Vec<f64>,
}

impl ReferencePath {
    pub fn new(points: Vec<Waypoint>) -> Result<Self, SimError> {
        if points.len() < 2 {
            return Err(SimError::Config("reference path needs at least two waypoints".into()));
        }
        if points
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.v_ref.is_finite()))
        {
            return Err(SimError::Config("non-finite waypoint".into()));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if d <= 0.0 {
                return Err(SimError::Config("waypoint arc length must strictly increase".into()));
            }
            arc.push(arc.last().unwrap() + d);
        }

        let n = points.len();
        let heading: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = match i {
                    0 => (points[0], points[1]),
                    i if i == n - 1 => (points[n - 2], points[n - 1]),
                    i => (points[i - 1], points[i + 1]),
                };
                (b.y - a.y).atan2(b.x - a.x)
            })
            .collect();

        let mut curvature = vec![0.0; n];
        for i in 1..n - 1 {
            curvature[i] = menger_curvature(points[i - 1], points[i], points[i + 1]);
        }
        if n > 2 {
            curvature[0] = curvature[1];
            curvature[n - 1] = curvature[n - 2];
        }

        Ok(Self {
            points,
            arc,
            heading,
            curvature,
        })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let len = self.arc[i + 1] - self.arc[i];
        (i, (s - self.arc[i]) / len)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, tau) = self.segment_at(s);
        let h0 = self.heading[i];
        let dh = wrap_angle(self.heading[i + 1] - h0);
        wrap_angle(h0 + tau * dh)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, tau) = self.segment_at(s);
        self.curvature[i] + tau * (self.curvature[i + 1] - self.curvature[i])
    }

    pub fn v_ref_at(&self, s: f64) -> f64 {
        let (i, tau) = self.segment_at(s);
        self.points[i].v_ref + tau * (self.points[i + 1].v_ref - self.points[i].v_ref)
    }

    /// Point on the polyline at arc length `s` (clamped to the path).
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (i, tau) = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (a.x + tau * (b.x - a.x), a.y + tau * (b.y - a.y))
    }

    /// Nearest-point projection over all segments.
    pub fn project(&self, x: f64, y: f64) -> PathProjection {
        let last = self.points.len() - 2;
        let mut best = (f64::INFINITY, 0usize, 0.0f64, 0.0f64);
        for i in 0..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let raw = ((x - a.x) * dx + (y - a.y) * dy) / len2;
            let tau = raw.clamp(0.0, 1.0);
            let (px, py) = (a.x + tau * dx, a.y + tau * dy);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if d2 < best.0 {
                best = (d2, i, tau, raw);
            }
        }
        let (_, i, tau, raw) = best;
        let s = self.arc[i] + tau * (self.arc[i + 1] - self.arc[i]);
        let heading = self.heading_at(s);
        let (px, py) = self.point_at(s);
        let lateral = -heading.sin() * (x - px) + heading.cos() * (y - py);
        PathProjection {
            s,
            lateral,
            heading,
            curvature: self.curvature_at(s),
            v_ref: self.v_ref_at(s),
            beyond_end: i == last && raw > 1.0,
        }
    }
}

fn menger_curvature(a: Waypoint, b: Waypoint, c: Waypoint) -> f64 {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let ab = (b.x - a.x).hypot(b.y - a.y);
    let bc = (c.x - b.x).hypot(c.y - b.y);
    let ca = (a.x - c.x).hypot(a.y - c.y);
    let denom = ab * bc * ca;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}
