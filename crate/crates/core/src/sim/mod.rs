//! Seeded closed-loop simulation, metrics and Monte Carlo batches.
//!
//! The simulator runs in `f64`. Each run draws its noise from independent
//! ChaCha8 streams keyed by (seed, purpose, agent), so two variants of the
//! same seed see identical noise and differ only through their responses
//! to detections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod config;
pub mod engine;
pub mod metrics;
pub mod montecarlo;
pub mod trace;

pub use config::{Issue, ScenarioConfig, Severity};
pub use engine::Simulation;
pub use montecarlo::{monte_carlo, MonteCarloSummary, VariantSummary};
pub use trace::{AgentRecord, FixStatus, StepTrace};

use crate::estimation::Mode;
use crate::threat::CompromiseKind;
use metrics::{nan_mean, Moments};

/// Recovery path compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Detectors run but nothing reacts to them.
    #[serde(rename = "no_recovery")]
    NoRecovery,
    /// RSSI recovery with the nominal position-sensor covariance.
    #[serde(rename = "recovery_no_R_update")]
    RecoveryNoRUpdate,
    /// RSSI recovery with covariance matching on the filter's own residual.
    #[serde(rename = "recovery_nonrobust_R")]
    RecoveryNonrobustR,
    /// RSSI recovery with the estimate-free rolling covariance.
    #[serde(rename = "recovery_robust_R")]
    RecoveryRobustR,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::NoRecovery,
        Variant::RecoveryNoRUpdate,
        Variant::RecoveryNonrobustR,
        Variant::RecoveryRobustR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoRecovery => "no_recovery",
            Variant::RecoveryNoRUpdate => "recovery_no_R_update",
            Variant::RecoveryNonrobustR => "recovery_nonrobust_R",
            Variant::RecoveryRobustR => "recovery_robust_R",
        }
    }

    /// Whether detections trigger recovery and neighbour exclusion.
    pub fn responds(self) -> bool {
        self != Variant::NoRecovery
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "no_recovery" | "none" => Ok(Variant::NoRecovery),
            "recovery_no_r_update" | "no_update" | "no_r_update" => Ok(Variant::RecoveryNoRUpdate),
            "recovery_nonrobust_r" | "nonrobust" => Ok(Variant::RecoveryNonrobustR),
            "recovery_robust_r" | "robust" => Ok(Variant::RecoveryRobustR),
            _ => Err(format!(
                "unknown variant `{s}` (expected one of: none, no-update, nonrobust, robust)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("numeric failure at step {step}{}: {source}", agent.map(|a| format!(", agent {a}")).unwrap_or_default())]
    Numeric {
        step: usize,
        agent: Option<usize>,
        #[source]
        source: crate::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    /// Compromise kind, if this agent is attacked.
    pub compromise: Option<String>,
    pub detected_at: Option<usize>,
    /// Steps from compromise start to on-board detection.
    pub detection_latency: Option<usize>,
    pub final_goal_distance: f64,
    pub within_goal: bool,
    pub recovered_steps: usize,
    pub no_fix_steps: usize,
    /// Neighbours this agent excluded.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub n_agents: usize,
    pub attack_start: Option<usize>,
    pub mean_formation_error: Option<f64>,
    pub mean_formation_error_pre_attack: Option<f64>,
    pub mean_formation_error_post_attack: Option<f64>,
    /// Position estimation error `p − p̂` of compromised agents in the
    /// evaluation window (recovered-mode steps, or post-attack steps without
    /// recovery).
    pub error_x: Moments,
    pub error_y: Moments,
    pub agents: Vec<AgentSummary>,
}


pub struct RunOutput {
    pub trace: Vec<StepTrace>,
    pub summary: RunSummary,
}

/// Runs one scenario to `max_steps`.
pub fn run_scenario(cfg: &ScenarioConfig, variant: Variant) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(cfg, variant)?;
    sim.run()?;
    let summary = summarize(&sim);
    Ok(RunOutput {
        trace: sim.into_trace(),
        summary,
    })
}

fn kind_name(kind: &CompromiseKind<f64>) -> &'static str {
    match kind {
        CompromiseKind::Bias { .. } => "bias",
        CompromiseKind::RampDivert { .. } => "ramp_divert",
        CompromiseKind::Stuck => "stuck",
        CompromiseKind::NoiseInflation { .. } => "noise_inflation",
    }
}

pub fn summarize(sim: &Simulation) -> RunSummary {
    let cfg = sim.config();
    let variant = sim.variant();
    let trace = sim.trace();
    let attack_start = cfg.attack_start();
    let split = attack_start.unwrap_or(usize::MAX);
    let e = |pred: &dyn Fn(usize) -> bool| {
        nan_mean(
            trace
                .iter()
                .filter(|s| pred(s.k))
                .map(|s| s.formation_error.unwrap_or(f64::NAN)),
        )
    };

    let mut error_x = Moments::default();
    let mut error_y = Moments::default();
    for step in trace {
        for rec in &step.agents {
            let in_window = match variant {
                Variant::NoRecovery => rec.compromised,
                _ => rec.compromised && rec.mode == Mode::Recovered,
            };
            if in_window {
                let (ex, ey) = rec.position_error();
                error_x.push(ex);
                error_y.push(ey);
            }
        }
    }

    let goal = nalgebra::DVector::from_column_slice(&cfg.world.goal);
    let detections = sim.detection_steps();
    let flagged = sim.flagged_sets();
    let agents = sim
        .true_states()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let spec = cfg.compromises.iter().find(|c| c.target == i);
            let dist = (x.rows(0, config::POS_DIM) - &goal).norm();
            let (recovered_steps, no_fix_steps) = trace.iter().fold((0, 0), |(r, nf), s| {
                let a = &s.agents[i];
                (
                    r + usize::from(a.mode == Mode::Recovered),
                    nf + usize::from(a.fix == FixStatus::NoFix),
                )
            });
            AgentSummary {
                agent: i,
                compromise: spec.map(|s| kind_name(&s.kind).to_string()),
                detected_at: detections[i],
                detection_latency: match (spec, detections[i]) {
                    (Some(s), Some(d)) if d >= s.start_k => Some(d - s.start_k),
                    _ => None,
                },
                final_goal_distance: dist,
                within_goal: dist <= cfg.world.goal_radius,
                recovered_steps,
                no_fix_steps,
                flagged: flagged[i].clone(),
            }
        })
        .collect();

    RunSummary {
        variant,
        seed: cfg.seed,
        steps: trace.len(),
        n_agents: cfg.n_agents,
        attack_start,
        mean_formation_error: e(&|_| true),
        mean_formation_error_pre_attack: e(&|k| k < split),
        mean_formation_error_post_attack: attack_start.and_then(|_| e(&|k| k >= split)),
        error_x,
        error_y,
        agents,
    }
}
