//! The six-parameter action matrix, its style ranges, validation against the
//! global envelope, and decoding from generator output.

mod parse;
mod ranges;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::parse_policy;
pub use ranges::{Band, Bounds, Envelope, ParamName, ParamRanges, ParamSet, RangeTable, Style, StyleBands, StyleProfile};

use crate::control::{MpcWeights, PidGains};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("no policy object found in response")]
    NoPolicyFound,
    #[error("malformed policy: {0}")]
    MalformedPolicy(String),
    #[error("{0}")]
    Validation(#[from] ValidationError),
    #[error("range table error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyOrigin {
    Baseline,
    RuleBackend,
    RemoteBackend,
    Manual,
}

/// PID gains for the longitudinal loop and MPC weights for the lateral loop.
///
/// Wire form: `{"id":..,"origin":..,"pid":{"kp","ki","kd"},"mpc":{"w_l","w_h","w_s"}}`;
/// `id` and `origin` are optional when decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatrix {
    #[serde(default)]
    pub id: String,
    #[serde(default = "manual")]
    pub origin: PolicyOrigin,
    pub pid: PidGains,
    pub mpc: MpcWeights,
}

fn manual() -> PolicyOrigin {
    PolicyOrigin::Manual
}

impl ActionMatrix {
    pub fn from_params(id: impl Into<String>, origin: PolicyOrigin, p: &ParamSet<f64>) -> Self {
        Self {
            id: id.into(),
            origin,
            pid: PidGains::new(p.kp, p.ki, p.kd),
            mpc: MpcWeights::new(p.w_l, p.w_h, p.w_s),
        }
    }

    pub fn params(&self) -> ParamSet<f64> {
        ParamSet {
            kp: self.pid.kp,
            ki: self.pid.ki,
            kd: self.pid.kd,
            w_l: self.mpc.w_l,
            w_h: self.mpc.w_h,
            w_s: self.mpc.w_s,
        }
    }

    pub fn get(&self, name: ParamName) -> f64 {
        *self.params().get(name)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serialization cannot fail")
    }

    /// Parameters only, in the order of the wire schema.
    pub fn params_json(&self) -> String {
        serde_json::json!({
            "pid": self.pid,
            "mpc": self.mpc,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub param: ParamName,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "policy outside envelope:")?;
        for v in &self.violations {
            write!(f, " {}={} not in [{}, {}];", v.param, v.value, v.min, v.max)?;
        }
        Ok(())
    }
}

/// Accepts iff every parameter lies in the closed `[min, max]` of its
/// envelope entry.
pub fn validate(policy: &ActionMatrix, envelope: &Envelope) -> Result<(), ValidationError> {
    let violations: Vec<Violation> = policy
        .params()
        .iter()
        .filter_map(|(p, &value)| {
            let b = envelope.get(p);
            (!b.contains(value)).then_some(Violation {
                param: p,
                value,
                min: b.min,
                max: b.max,
            })
        })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations })
    }
}

pub const BASELINE_ID: &str = "baseline";

/// Moderate-style midpoints of `table`.
pub fn baseline_from(table: &RangeTable) -> ActionMatrix {
    ActionMatrix::from_params(BASELINE_ID, PolicyOrigin::Baseline, &table.profile(Style::Moderate).midpoints())
}

pub fn default_baseline() -> ActionMatrix {
    baseline_from(&RangeTable::default())
}
