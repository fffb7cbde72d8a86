use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PolicyError;

/// The six tunable entries of an action matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "kp")]
    Kp,
    #[serde(rename = "ki")]
    Ki,
    #[serde(rename = "kd")]
    Kd,
    #[serde(rename = "w_l")]
    Wl,
    #[serde(rename = "w_h")]
    Wh,
    #[serde(rename = "w_s")]
    Ws,
}

impl ParamName {
    pub const ALL: [ParamName; 6] = [Self::Kp, Self::Ki, Self::Kd, Self::Wl, Self::Wh, Self::Ws];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Kp => "kp",
            Self::Ki => "ki",
            Self::Kd => "kd",
            Self::Wl => "w_l",
            Self::Wh => "w_h",
            Self::Ws => "w_s",
        }
    }

    /// Whether a larger value means a more conservative controller.
    pub fn higher_is_conservative(&self) -> bool {
        matches!(self, Self::Ws)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per action-matrix parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
    pub w_l: T,
    pub w_h: T,
    pub w_s: T,
}

impl<T> ParamSet<T> {
    pub fn from_fn(mut f: impl FnMut(ParamName) -> T) -> Self {
        Self {
            kp: f(ParamName::Kp),
            ki: f(ParamName::Ki),
            kd: f(ParamName::Kd),
            w_l: f(ParamName::Wl),
            w_h: f(ParamName::Wh),
            w_s: f(ParamName::Ws),
        }
    }

    pub fn get(&self, name: ParamName) -> &T {
        match name {
            ParamName::Kp => &self.kp,
            ParamName::Ki => &self.ki,
            ParamName::Kd => &self.kd,
            ParamName::Wl => &self.w_l,
            ParamName::Wh => &self.w_h,
            ParamName::Ws => &self.w_s,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(ParamName, &T) -> U) -> ParamSet<U> {
        ParamSet::from_fn(|p| f(p, self.get(p)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamName, &T)> {
        ParamName::ALL.into_iter().map(move |p| (p, self.get(p)))
    }
}

/// Global bounds of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Style-specific band inside the global bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

/// `min ≤ lower ≤ upper ≤ max` with `min < max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub min: f64,
    pub lower: f64,
    pub upper: f64,
    pub max: f64,
}

impl ParamRanges {
    pub fn new(min: f64, lower: f64, upper: f64, max: f64) -> Result<Self, PolicyError> {
        let r = Self { min, lower, upper, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let finite = [self.min, self.lower, self.upper, self.max].iter().all(|v| v.is_finite());
        if finite && self.min <= self.lower && self.lower <= self.upper && self.upper <= self.max && self.min < self.max {
            Ok(())
        } else {
            Err(PolicyError::Config(format!("invalid parameter ranges {self:?}")))
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { min: self.min, max: self.max }
    }
}

pub type Envelope = ParamSet<Bounds>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Aggressive,
    Moderate,
    Conservative,
}

impl Style {
    pub const ALL: [Style; 3] = [Self::Aggressive, Self::Moderate, Self::Conservative];

    /// One step toward `Conservative`; `None` when already there.
    pub fn more_conservative(&self) -> Option<Style> {
        match self {
            Self::Aggressive => Some(Self::Moderate),
            Self::Moderate => Some(Self::Conservative),
            Self::Conservative => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Aggressive => "aggressive",
            Self::Moderate => "moderate",
            Self::Conservative => "conservative",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aggressive" => Ok(Self::Aggressive),
            "moderate" => Ok(Self::Moderate),
            "conservative" => Ok(Self::Conservative),
            other => Err(PolicyError::Config(format!("unknown style '{other}'"))),
        }
    }
}

/// Full range table of one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub style: Style,
    pub ranges: ParamSet<ParamRanges>,
}

impl StyleProfile {
    pub fn midpoints(&self) -> ParamSet<f64> {
        self.ranges.map(|_, r| r.midpoint())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleBands {
    pub aggressive: ParamSet<Band>,
    pub moderate: ParamSet<Band>,
    pub conservative: ParamSet<Band>,
}

/// Envelope plus the three style bands; the on-disk range table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeTable {
    pub envelope: Envelope,
    pub styles: StyleBands,
}

const DEFAULT_TABLE: &str = include_str!("../../data/policy_ranges.toml");

impl Default for RangeTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("bundled range table is valid")
    }
}

impl RangeTable {
    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let t: Self = toml::from_str(text).map_err(|e| PolicyError::Config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn bands(&self, style: Style) -> &ParamSet<Band> {
        match style {
            Style::Aggressive => &self.styles.aggressive,
            Style::Moderate => &self.styles.moderate,
            Style::Conservative => &self.styles.conservative,
        }
    }

    pub fn profile(&self, style: Style) -> StyleProfile {
        let bands = self.bands(style);
        StyleProfile {
            style,
            ranges: ParamSet::from_fn(|p| {
                let b = self.envelope.get(p);
                let band = bands.get(p);
                ParamRanges {
                    min: b.min,
                    lower: band.lower,
                    upper: band.upper,
                    max: b.max,
                }
            }),
        }
    }

    pub fn profiles(&self) -> [StyleProfile; 3] {
        Style::ALL.map(|s| self.profile(s))
    }

    /// Checks every range and the order consistency of the style midpoints:
    /// `kp` falls and `w_s` rises from aggressive to conservative.
    pub fn validate(&self) -> Result<(), PolicyError> {
        for s in Style::ALL {
            for (p, r) in self.profile(s).ranges.iter() {
                r.validate()
                    .map_err(|_| PolicyError::Config(format!("{s} range for {p} is invalid: {r:?}")))?;
            }
        }
        let mid = |s: Style, p: ParamName| self.profile(s).ranges.get(p).midpoint();
        let (a, m, c) = (Style::Aggressive, Style::Moderate, Style::Conservative);
        if !(mid(a, ParamName::Kp) >= mid(m, ParamName::Kp) && mid(m, ParamName::Kp) >= mid(c, ParamName::Kp)) {
            return Err(PolicyError::Config("kp midpoints must not increase from aggressive to conservative".into()));
        }
        if !(mid(a, ParamName::Ws) <= mid(m, ParamName::Ws) && mid(m, ParamName::Ws) <= mid(c, ParamName::Ws)) {
            return Err(PolicyError::Config("w_s midpoints must not decrease from aggressive to conservative".into()));
        }
        Ok(())
    }

    /// Human-readable table used in reports and prompts.
    pub fn render(&self) -> String {
        let mut out = String::from("param | min | max | aggressive | moderate | conservative\n");
        for p in ParamName::ALL {
            let b = self.envelope.get(p);
            let band = |s: Style| {
                let x = self.bands(s).get(p);
                format!("[{}, {})", x.lower, x.upper)
            };
            out.push_str(&format!(
                "{p} | {} | {} | {} | {} | {}\n",
                b.min,
                b.max,
                band(Style::Aggressive),
                band(Style::Moderate),
                band(Style::Conservative)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_valid() {
        let t = RangeTable::default();
        let m = t.profile(Style::Moderate).midpoints();
        assert!((m.kp - 0.8).abs() < 1e-12);
        assert!((m.ki - 0.05).abs() < 1e-12);
        assert!((m.kd - 0.1).abs() < 1e-12);
        assert!((m.w_l - 5.0).abs() < 1e-12);
        assert!((m.w_h - 8.0).abs() < 1e-12);
        assert!((m.w_s - 1.0).abs() < 1e-12);
        let kp = t.profile(Style::Aggressive).ranges.kp;
        assert_eq!((kp.min, kp.lower, kp.upper, kp.max), (0.2, 1.0, 1.6, 2.0));
    }

    #[test]
    fn order_inconsistent_table_rejected() {
        let text = DEFAULT_TABLE.replace(
            "[styles.aggressive]\nkp = { lower = 1.0, upper = 1.6 }",
            "[styles.aggressive]\nkp = { lower = 0.3, upper = 0.4 }",
        );
        assert!(matches!(RangeTable::from_toml(&text), Err(PolicyError::Config(_))));
    }

    #[test]
    fn band_outside_envelope_rejected() {
        let text = DEFAULT_TABLE.replace("kp = { min = 0.2, max = 2.0 }", "kp = { min = 0.2, max = 1.2 }");
        assert!(RangeTable::from_toml(&text).is_err());
    }

    #[test]
    fn ranges_invariants() {
        assert!(ParamRanges::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(ParamRanges::new(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ParamRanges::new(0.0, 0.6, 0.5, 1.0).is_err());
    }
}
