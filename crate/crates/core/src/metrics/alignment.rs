use super::MetricError;
use crate::policy::{ActionMatrix, ParamName, ParamRanges, ParamSet};

/// Piecewise-linear range score: 0 outside `[min, max]`, rising linearly on
/// `[min, lower)`, 100 on `[lower, upper)`, falling linearly on `[upper, max]`.
///
/// When `upper == max` the band is closed at the top so `x == max` scores 100
/// rather than dividing by zero.
pub fn range_score(x: f64, r: &ParamRanges) -> f64 {
    if !(x >= r.min && x <= r.max) {
        0.0
    } else if x < r.lower {
        100.0 * (x - r.min) / (r.lower - r.min)
    } else if x < r.upper || r.upper == r.max {
        100.0
    } else {
        100.0 * (r.max - x) / (r.max - r.upper)
    }
}

pub fn equal_param_weights() -> ParamSet<f64> {
    ParamSet::from_fn(|_| 1.0 / ParamName::ALL.len() as f64)
}

/// Weighted mean of the per-parameter range scores.
pub fn command_alignment(
    p: &ActionMatrix,
    expected: &ParamSet<ParamRanges>,
    weights: &ParamSet<f64>,
) -> Result<f64, MetricError> {
    let sum: f64 = weights.iter().map(|(_, w)| *w).sum();
    if weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(MetricError::Weights(format!("parameter weights must be non-negative and sum to 1, got {sum}")));
    }
    let params = p.params();
    Ok(ParamName::ALL
        .iter()
        .map(|&n| weights.get(n) * range_score(*params.get(n), expected.get(n)))
        .sum())
}

/// `adverse` is more conservative than `clear` when kp does not rise, w_s
/// does not fall, and at least one of them strictly moves.
pub fn is_more_conservative(adverse: &ActionMatrix, clear: &ActionMatrix) -> bool {
    let (kp_a, kp_c) = (adverse.pid.kp, clear.pid.kp);
    let (ws_a, ws_c) = (adverse.mpc.w_s, clear.mpc.w_s);
    kp_a <= kp_c && ws_a >= ws_c && (kp_a < kp_c || ws_a > ws_c)
}

/// Percentage of (adverse, clear) pairs in which the adverse policy is more
/// conservative; `None` without pairs.
pub fn scenario_alignment(pairs: &[(ActionMatrix, ActionMatrix)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.iter().filter(|(a, c)| is_more_conservative(a, c)).count();
    Some(100.0 * n as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{default_baseline, RangeTable, Style};
    use proptest::prelude::*;

    fn r() -> ParamRanges {
        ParamRanges::new(0.0, 1.0, 2.0, 4.0).unwrap()
    }

    #[test]
    fn anchor_points() {
        let r = r();
        assert_eq!(range_score(0.0, &r), 0.0);
        assert_eq!(range_score(0.5, &r), 50.0);
        assert_eq!(range_score(1.0, &r), 100.0);
        assert_eq!(range_score(1.999, &r), 100.0);
        assert_eq!(range_score(3.0, &r), 50.0);
        assert_eq!(range_score(4.0, &r), 0.0);
        assert_eq!(range_score(-1.0, &r), 0.0);
        assert_eq!(range_score(5.0, &r), 0.0);
        assert_eq!(range_score(f64::NAN, &r), 0.0);
    }

    #[test]
    fn degenerate_edges() {
        let r = ParamRanges::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(range_score(0.0, &r), 100.0);
        assert_eq!(range_score(1.0, &r), 100.0);
    }

    fn moderate() -> ParamSet<ParamRanges> {
        RangeTable::default().profile(Style::Moderate).ranges
    }

    #[test]
    fn in_band_scores_100() {
        let s = command_alignment(&default_baseline(), &moderate(), &equal_param_weights()).unwrap();
        assert!((s - 100.0).abs() < 1e-12);
    }

    #[test]
    fn kp_at_min() {
        let ranges = moderate();
        let mut p = default_baseline();
        p.pid.kp = ranges.kp.min;
        let s = command_alignment(&p, &ranges, &equal_param_weights()).unwrap();
        assert!((s - 500.0 / 6.0).abs() < 1e-9);
        p.pid.kp = 0.5 * (ranges.kp.min + ranges.kp.lower);
        let s = command_alignment(&p, &ranges, &equal_param_weights()).unwrap();
        assert!((s - 550.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn bad_weights_rejected() {
        let w = ParamSet::from_fn(|_| 0.2);
        assert!(command_alignment(&default_baseline(), &moderate(), &w).is_err());
    }

    #[test]
    fn scenario_alignment_counts() {
        let clear = default_baseline();
        let mut cons = clear.clone();
        cons.pid.kp -= 0.1;
        cons.mpc.w_s += 0.5;
        assert_eq!(scenario_alignment(&[]), None);
        assert_eq!(scenario_alignment(&vec![(clear.clone(), clear.clone()); 5]), Some(0.0));
        assert_eq!(scenario_alignment(&vec![(cons.clone(), clear.clone()); 5]), Some(100.0));
        let mixed: Vec<_> = (0..5).map(|i| (if i < 3 { cons.clone() } else { clear.clone() }, clear.clone())).collect();
        assert_eq!(scenario_alignment(&mixed), Some(60.0));
        let mut mixed_dir = clear.clone();
        mixed_dir.pid.kp -= 0.1;
        mixed_dir.mpc.w_s -= 0.1;
        assert!(!is_more_conservative(&mixed_dir, &clear));
    }

    proptest! {
        #[test]
        fn continuous_and_bounded(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0, d in 0.01f64..10.0, x in -5.0f64..40.0) {
            let mut v = [a, a + b, a + b + c, a + b + c + d];
            v.sort_by(f64::total_cmp);
            let r = ParamRanges::new(v[0], v[1], v[2], v[3]).unwrap();
            let s = range_score(x, &r);
            prop_assert!((0.0..=100.0).contains(&s));
            // Lipschitz bound on the linear pieces.
            let eps = 1e-7;
            let slope = |lo: f64, hi: f64| if hi > lo { 100.0 / (hi - lo) } else { 0.0 };
            let l = slope(r.min, r.lower).max(slope(r.upper, r.max));
            if x > r.min + eps && x < r.max - eps && (x - r.upper).abs() > eps && (x - r.lower).abs() > eps {
                prop_assert!((range_score(x + eps, &r) - s).abs() <= l * eps * 1.0001 + 1e-9);
            }
        }
    }
}
