use serde::{Deserialize, Serialize};

use crate::policygen::DirectnessLevel;
use crate::sim::ScenarioKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Baseline,
    Ours,
}

/// Whether the human overrode the system on one trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TakeoverRecord {
    pub session: String,
    pub instruction: String,
    pub directness: DirectnessLevel,
    pub system: SystemKind,
    #[serde(default)]
    pub scenario: Option<ScenarioKind>,
    pub taken_over: bool,
}

/// Conjunction of optional field matches; the default matches everything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TakeoverFilter {
    pub system: Option<SystemKind>,
    pub directness: Option<DirectnessLevel>,
    pub scenario: Option<ScenarioKind>,
}

impl TakeoverFilter {
    pub fn matches(&self, r: &TakeoverRecord) -> bool {
        self.system.is_none_or(|s| s == r.system)
            && self.directness.is_none_or(|d| d == r.directness)
            && self.scenario.is_none_or(|s| r.scenario == Some(s))
    }
}

/// Percentage of matching trips that were taken over; `None` when nothing
/// matches.
pub fn takeover_rate(records: &[TakeoverRecord], filter: &TakeoverFilter) -> Option<f64> {
    let (n, taken) = records
        .iter()
        .filter(|r| filter.matches(r))
        .fold((0usize, 0usize), |(n, t), r| (n + 1, t + r.taken_over as usize));
    (n > 0).then(|| 100.0 * taken as f64 / n as f64)
}

/// Relative reduction `100·(before − after)/before`; `None` when `before` is 0.
pub fn relative_reduction(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| 100.0 * (before - after) / before)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trips(system: SystemKind, level: DirectnessLevel, n: usize, taken: usize) -> Vec<TakeoverRecord> {
        (0..n)
            .map(|i| TakeoverRecord {
                session: format!("s{i}"),
                instruction: "go faster".into(),
                directness: level,
                system,
                scenario: Some(ScenarioKind::Acceleration),
                taken_over: i < taken,
            })
            .collect()
    }

    #[test]
    fn counting() {
        let r = trips(SystemKind::Ours, DirectnessLevel::L1, 36, 2);
        let rate = takeover_rate(&r, &TakeoverFilter::default()).unwrap();
        assert!((rate - 5.56).abs() < 0.01);
        assert_eq!(takeover_rate(&trips(SystemKind::Ours, DirectnessLevel::L1, 5, 0), &TakeoverFilter::default()), Some(0.0));
        assert_eq!(takeover_rate(&[], &TakeoverFilter::default()), None);
    }

    #[test]
    fn filters() {
        let mut r = trips(SystemKind::Ours, DirectnessLevel::L3, 12, 1);
        r.extend(trips(SystemKind::Baseline, DirectnessLevel::L3, 12, 4));
        let by = |system| TakeoverFilter { system: Some(system), ..Default::default() };
        let ours = takeover_rate(&r, &by(SystemKind::Ours)).unwrap();
        let base = takeover_rate(&r, &by(SystemKind::Baseline)).unwrap();
        assert!((relative_reduction(base, ours).unwrap() - 75.0).abs() < 1e-9);
        let f = TakeoverFilter { directness: Some(DirectnessLevel::L1), ..Default::default() };
        assert_eq!(takeover_rate(&r, &f), None);
    }

    #[test]
    fn reduction() {
        assert!((relative_reduction(19.44, 5.56).unwrap() - 71.4).abs() < 0.1);
        assert_eq!(relative_reduction(0.0, 0.0), None);
    }
}
