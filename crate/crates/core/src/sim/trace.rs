//! Per-step trace records and their CSV form.
//!
//! One CSV row per agent per step, columns in [`CSV_COLUMNS`] order.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::estimation::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixStatus {
    /// Not in recovered mode.
    None,
    Ok,
    /// Fewer than `D + 1` trusted anchors or degenerate geometry; the step
    /// was predict-only.
    NoFix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentRecord {
    pub k: usize,
    pub agent: usize,
    pub mode: Mode,
    pub compromised: bool,
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub px_hat: f64,
    pub py_hat: f64,
    pub vx_hat: f64,
    pub vy_hat: f64,
    /// On-board test measure (NaN in recovered mode).
    pub z: f64,
    pub alarm: bool,
    pub a_hat: f64,
    pub anomalous: bool,
    /// On-board detector has latched (this step or earlier).
    pub detected: bool,
    pub fix: FixStatus,
    pub fix_x: f64,
    pub fix_y: f64,
    pub anchors: usize,
    pub condition: f64,
    pub clamped: usize,
    /// Diagonal of the position block of `R_eff`.
    pub r_xx: f64,
    pub r_yy: f64,
    /// Size of this agent's accusation set.
    pub flagged: usize,
    /// Formation error over the edges the controllers used this step (NaN
    /// when there were none).
    pub formation_error: f64,
}

pub const CSV_COLUMNS: [&str; 27] = [
    "k",
    "agent",
    "mode",
    "compromised",
    "px",
    "py",
    "vx",
    "vy",
    "px_hat",
    "py_hat",
    "vx_hat",
    "vy_hat",
    "z",
    "alarm",
    "a_hat",
    "anomalous",
    "detected",
    "fix",
    "fix_x",
    "fix_y",
    "anchors",
    "condition",
    "clamped",
    "r_xx",
    "r_yy",
    "flagged",
    "formation_error",
];

impl AgentRecord {
    pub(crate) fn blank(k: usize, agent: usize) -> Self {
        Self {
            k,
            agent,
            mode: Mode::Nominal,
            compromised: false,
            px: 0.0,
            py: 0.0,
            vx: 0.0,
            vy: 0.0,
            px_hat: 0.0,
            py_hat: 0.0,
            vx_hat: 0.0,
            vy_hat: 0.0,
            z: f64::NAN,
            alarm: false,
            a_hat: f64::NAN,
            anomalous: false,
            detected: false,
            fix: FixStatus::None,
            fix_x: f64::NAN,
            fix_y: f64::NAN,
            anchors: 0,
            condition: f64::NAN,
            clamped: 0,
            r_xx: f64::NAN,
            r_yy: f64::NAN,
            flagged: 0,
            formation_error: f64::NAN,
        }
    }

    pub(crate) fn set_states(&mut self, x: &DVector<f64>, xhat: &DVector<f64>) {
        (self.px, self.py, self.vx, self.vy) = (x[0], x[1], x[2], x[3]);
        (self.px_hat, self.py_hat, self.vx_hat, self.vy_hat) = (xhat[0], xhat[1], xhat[2], xhat[3]);
    }

    pub fn position_error(&self) -> (f64, f64) {
        (self.px - self.px_hat, self.py - self.py_hat)
    }
}

/// All agents at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub k: usize,
    /// `None` when the control graph has no edges.
    pub formation_error: Option<f64>,
    pub agents: Vec<AgentRecord>,
}

pub fn write_csv<W: Write>(out: W, trace: &[StepTrace]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for step in trace {
        for rec in &step.agents {
            w.serialize(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, trace: &[StepTrace]) -> csv::Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), trace)
}
