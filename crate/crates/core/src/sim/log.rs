use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::plant::VehicleState;
use super::scenario::ScenarioKind;
use super::SimError;
use crate::policy::{ActionMatrix, Style};

/// Column order of the CSV form. The first ten columns are the stable core;
/// the rest carry the reference and solver data the metrics need.
pub const CSV_COLUMNS: [&str; 16] = [
    "t",
    "x",
    "y",
    "psi",
    "v",
    "a_cmd",
    "delta_cmd",
    "lead_x",
    "lead_v",
    "policy_id",
    "lead_y",
    "ref_psi",
    "ref_v",
    "lateral_error",
    "qp_iterations",
    "qp_residual",
];

const META_PREFIX: &str = "#meta ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadSample {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

/// One control step: the ego state at `t` and the commands applied over
/// `[t, t + dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub a_cmd: f64,
    pub delta_cmd: f64,
    pub lead: Option<LeadSample>,
    pub policy_id: String,
    /// Reference path heading at the ego's foot point.
    pub ref_psi: f64,
    pub ref_v: f64,
    pub lateral_error: f64,
    pub qp_iterations: u32,
    pub qp_residual: f64,
}

impl TrajectorySample {
    pub fn ego_state(&self) -> VehicleState {
        VehicleState {
            x: self.x,
            y: self.y,
            psi: self.psi,
            v: self.v,
            a: self.a_cmd,
            delta_f: self.delta_cmd,
            t: self.t,
        }
    }
}

/// Run identity plus everything besides the samples that scoring needs, so a
/// log can be re-scored on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub config_hash: String,
    /// Every policy that was active during the run, in activation order.
    #[serde(default)]
    pub policies: Vec<ActionMatrix>,
    /// Style the final policy is scored against for command alignment.
    #[serde(default)]
    pub expected_style: Option<Style>,
    /// Generation latency of the final policy, when it was measured.
    #[serde(default)]
    pub gen_latency: Option<f64>,
    /// Outcome of this run's adverse-vs-clear comparison, when it had one.
    #[serde(default)]
    pub scenario_alignment: Option<f64>,
    #[serde(default)]
    pub weight_preset: Option<String>,
}

impl LogMeta {
    pub fn new(scenario: ScenarioKind, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            scenario,
            seed,
            config_hash: config_hash.into(),
            policies: Vec::new(),
            expected_style: None,
            gen_latency: None,
            scenario_alignment: None,
            weight_preset: None,
        }
    }

    /// The policy whose id matches `id`, most recent activation first.
    pub fn policy(&self, id: &str) -> Option<&ActionMatrix> {
        self.policies.iter().rev().find(|p| p.id == id)
    }
}

#[derive(Serialize, Deserialize)]
struct CsvMeta {
    #[serde(flatten)]
    meta: LogMeta,
    dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub meta: LogMeta,
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryLog {
    pub fn new(meta: LogMeta, dt: f64) -> Self {
        Self {
            meta,
            dt,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_lead(&self) -> bool {
        self.samples.iter().any(|s| s.lead.is_some())
    }

    /// Checks the uniform time grid.
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidState("log dt must be positive".into()));
        }
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        for (k, s) in self.samples.iter().enumerate() {
            let expected = first.t + k as f64 * self.dt;
            if (s.t - expected).abs() > 1e-6 {
                return Err(SimError::InvalidState(format!(
                    "sample {k} at t={} breaks the uniform grid (expected {expected})",
                    s.t
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let log: Self = serde_json::from_str(text).map_err(|e| SimError::Format(e.to_string()))?;
        log.validate()?;
        Ok(log)
    }

    /// Writes the CSV form: a `#meta {json}` line, a header, one row per step.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        let meta = serde_json::to_string(&CsvMeta {
            meta: self.meta.clone(),
            dt: self.dt,
        })
        .map_err(|e| SimError::Format(e.to_string()))?;
        writeln!(out, "{META_PREFIX}{meta}").map_err(io_err)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.samples {
            w.write_record([
                s.t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.psi.to_string(),
                s.v.to_string(),
                s.a_cmd.to_string(),
                s.delta_cmd.to_string(),
                opt(s.lead.map(|l| l.x)),
                opt(s.lead.map(|l| l.v)),
                s.policy_id.clone(),
                opt(s.lead.map(|l| l.y)),
                s.ref_psi.to_string(),
                s.ref_v.to_string(),
                s.lateral_error.to_string(),
                s.qp_iterations.to_string(),
                s.qp_residual.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self, SimError> {
        let mut first = String::new();
        input.read_line(&mut first).map_err(io_err)?;
        let meta_json = first
            .trim_end()
            .strip_prefix(META_PREFIX)
            .ok_or_else(|| SimError::Format("missing '#meta' line".into()))?;
        let m: CsvMeta =
            serde_json::from_str(meta_json).map_err(|e| SimError::Format(e.to_string()))?;

        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_COLUMNS.iter().copied()) {
            return Err(SimError::Format(format!("unexpected CSV header: {header:?}")));
        }
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64, SimError> {
                rec[i].parse::<f64>().map_err(|e| {
                    SimError::Format(format!("row {row} column {}: {e}", CSV_COLUMNS[i]))
                })
            };
            let lead = if rec[7].is_empty() {
                None
            } else {
                Some(LeadSample {
                    x: num(7)?,
                    v: num(8)?,
                    y: num(10)?,
                })
            };
            samples.push(TrajectorySample {
                t: num(0)?,
                x: num(1)?,
                y: num(2)?,
                psi: num(3)?,
                v: num(4)?,
                a_cmd: num(5)?,
                delta_cmd: num(6)?,
                lead,
                policy_id: rec[9].to_string(),
                ref_psi: num(11)?,
                ref_v: num(12)?,
                lateral_error: num(13)?,
                qp_iterations: rec[14]
                    .parse()
                    .map_err(|e| SimError::Format(format!("row {row} qp_iterations: {e}")))?,
                qp_residual: num(15)?,
            });
        }
        let log = Self {
            meta: m.meta,
            dt: m.dt,
            samples,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        Self::read_csv(text.as_bytes())
    }
}

fn io_err(e: std::io::Error) -> SimError {
    SimError::Format(e.to_string())
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Format(e.to_string())
}
