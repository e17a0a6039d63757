//! Scenario configuration (TOML) and its validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::control::ControlParams;
use crate::detection::DetectorParams;
use crate::model::LtiModel;
use crate::threat::{CompromiseKind, CompromiseSpec};

/// Planar worlds only.
pub const POS_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    /// Sampling period (s).
    pub dt: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Turns off process, sensor and shadowing noise and the initial
    /// estimation error.
    #[serde(default)]
    pub disable_noise: bool,
    pub noise: NoiseConfig,
    pub control: ControlParams<f64>,
    pub channel: ChannelParams<f64>,
    /// On-board position-sensor detector.
    pub detector: DetectorParams<f64>,
    /// Neighbour monitors; defaults to `detector`.
    #[serde(default)]
    pub interagent_detector: Option<DetectorParams<f64>>,
    pub estimation: EstimationConfig,
    pub world: WorldConfig,
    #[serde(default, rename = "compromise")]
    pub compromises: Vec<CompromiseSpec<f64>>,
}

/// Diagonal process and sensor noise variances of the double integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r_pos: f64,
    pub r_vel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Forgetting parameter of the rolling residual covariance.
    pub gamma: f64,
    /// Eigenvalue floor of the learned position covariance (m²).
    #[serde(default = "default_r_floor")]
    pub r_floor: f64,
}

fn default_r_floor() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub goal: Vec<f64>,
    pub goal_radius: f64,
    /// Lower corner of the initial-position box.
    pub init_min: Vec<f64>,
    /// Upper corner of the initial-position box.
    pub init_max: Vec<f64>,
    /// Minimum initial pairwise spacing; defaults to `l_des / 2`.
    #[serde(default)]
    pub min_spacing: Option<f64>,
    /// Fixed initial positions, overriding the random draw.
    #[serde(default)]
    pub initial_positions: Option<Vec<Vec<f64>>>,
}

fn set_path(node: &mut toml::Value, path: &[&str], value: &toml::Value) -> Result<(), String> {
    let Some((head, rest)) = path.split_first() else {
        *node = value.clone();
        return Ok(());
    };
    match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert((*head).to_string(), value.clone());
                return Ok(());
            }
            let child = t.get_mut(*head).ok_or_else(|| format!("unknown key `{head}`"))?;
            set_path(child, rest, value)
        }
        toml::Value::Array(items) if *head == "*" => items.iter_mut().try_for_each(|v| set_path(v, rest, value)),
        toml::Value::Array(items) => {
            let idx: usize = head.parse().map_err(|_| format!("`{head}` is not an array index"))?;
            let len = items.len();
            let child = items
                .get_mut(idx)
                .ok_or_else(|| format!("index {idx} out of range (length {len})"))?;
            set_path(child, rest, value)
        }
        _ => Err(format!("`{head}` addresses into a scalar")),
    }
}

fn has_path(node: &toml::Value, path: &[&str]) -> bool {
    let Some((head, rest)) = path.split_first() else {
        return true;
    };
    match node {
        toml::Value::Table(t) => t.get(*head).is_some_and(|v| has_path(v, rest)),
        toml::Value::Array(items) if *head == "*" => items.iter().all(|v| has_path(v, rest)),
        toml::Value::Array(items) => head
            .parse::<usize>()
            .ok()
            .and_then(|i| items.get(i))
            .is_some_and(|v| has_path(v, rest)),
        _ => false,
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let ramp = |target: usize| CompromiseSpec {
            target,
            start_k: 350,
            kind: CompromiseKind::RampDivert {
                divert_target: vec![-60.0, 120.0],
                rate: 0.25,
            },
        };
        let inflate = |target: usize| CompromiseSpec {
            target,
            start_k: 350,
            kind: CompromiseKind::NoiseInflation { noise_scale: 8.0 },
        };
        Self {
            n_agents: 12,
            dt: 0.1,
            max_steps: 2000,
            seed: 1,
            disable_noise: false,
            noise: NoiseConfig {
                q_pos: 1e-5,
                q_vel: 1e-3,
                r_pos: 25.0,
                r_vel: 0.01,
            },
            control: ControlParams {
                l_des: 8.0,
                delta_u: 10.0,
                k_s: 1.0,
                k_d: 0.5,
                k_g: 0.04,
                c_v: 1.0,
                u_max: 2.0,
            },
            channel: ChannelParams {
                p_tx: 20.0,
                pl_d0: 40.0,
                d0: 1.0,
                beta: 2.0,
                sigma2_shadow: 2.0,
                delta_c: 40.0,
            },
            detector: DetectorParams {
                a_des: 0.05,
                alpha: 0.01,
                ell: 100,
                persistence: 130,
            },
            interagent_detector: None,
            estimation: EstimationConfig {
                gamma: 0.01,
                r_floor: 1e-4,
            },
            world: WorldConfig {
                goal: vec![40.0, 40.0],
                goal_radius: 20.0,
                init_min: vec![-15.0, -15.0],
                init_max: vec![15.0, 15.0],
                min_spacing: None,
                initial_positions: None,
            },
            compromises: (0..5).map(ramp).chain((5..7).map(inflate)).collect(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Sets one field by dotted path, e.g. `control.k_g=0.1`,
    /// `world.goal=[10.0, 0.0]` or `compromise.*.rate=0.05` (`*` matches
    /// every array element). The value is parsed as a TOML literal, falling
    /// back to a bare string.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), String> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
        let path: Vec<&str> = path.trim().split('.').collect();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut tree = toml::Value::try_from(&*self).map_err(|e| e.to_string())?;
        set_path(&mut tree, &path, &value)?;
        let next: ScenarioConfig = tree.try_into().map_err(|e: toml::de::Error| e.message().to_string())?;
        let echoed = toml::Value::try_from(&next).map_err(|e| e.to_string())?;
        if !has_path(&echoed, &path) {
            return Err(format!("unknown key `{}`", path.join(".")));
        }
        *self = next;
        Ok(())
    }

    pub fn interagent_params(&self) -> DetectorParams<f64> {
        self.interagent_detector.unwrap_or(self.detector)
    }

    pub fn min_spacing(&self) -> f64 {
        self.world.min_spacing.unwrap_or(self.control.l_des / 2.0)
    }

    /// Earliest compromise start, if any.
    pub fn attack_start(&self) -> Option<usize> {
        self.compromises.iter().map(|c| c.start_k).min()
    }

    pub fn model(&self) -> crate::Result<LtiModel<f64>> {
        let n = &self.noise;
        LtiModel::double_integrator(self.dt, n.q_pos, n.q_vel, n.r_pos, n.r_vel)
    }

    /// Every invariant violation and feasibility warning.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut err = |field: &str, msg: String| out.push(Issue::error(field, msg));

        if self.n_agents == 0 {
            err("n_agents", "must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            err("dt", format!("must be positive, got {}", self.dt));
        }
        if self.max_steps == 0 {
            err("max_steps", "must be at least 1".into());
        }
        for (name, v) in [
            ("noise.q_pos", self.noise.q_pos),
            ("noise.q_vel", self.noise.q_vel),
            ("noise.r_pos", self.noise.r_pos),
            ("noise.r_vel", self.noise.r_vel),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                err(name, format!("covariance entries must be positive (SPD), got {v}"));
            }
        }
        if let Err(e) = self.control.validate() {
            err("control", e.to_string());
        }
        if let Err(e) = self.channel.validate() {
            err("channel", e.to_string());
        }
        if let Err(e) = self.detector.validate() {
            err("detector", e.to_string());
        }
        if let Some(d) = &self.interagent_detector {
            if let Err(e) = d.validate() {
                err("interagent_detector", e.to_string());
            }
        }
        if !(self.estimation.gamma > 0.0 && self.estimation.gamma < 1.0) {
            err(
                "estimation.gamma",
                format!("must lie in (0, 1), got {}", self.estimation.gamma),
            );
        }
        if !(self.estimation.r_floor > 0.0) {
            err("estimation.r_floor", "must be positive".into());
        }

        let w = &self.world;
        if w.goal.len() != POS_DIM {
            err("world.goal", format!("must have {POS_DIM} coordinates"));
        }
        if !(w.goal_radius > 0.0) {
            err("world.goal_radius", "must be positive".into());
        }
        if w.init_min.len() != POS_DIM || w.init_max.len() != POS_DIM {
            err("world.init_min/init_max", format!("must have {POS_DIM} coordinates"));
        } else if w.init_min.iter().zip(&w.init_max).any(|(lo, hi)| !(lo < hi)) {
            err("world.init_min/init_max", "lower corner must be below upper corner".into());
        }
        if let Some(s) = w.min_spacing {
            if !(s >= 0.0) {
                err("world.min_spacing", "must be non-negative".into());
            }
        }
        match &w.initial_positions {
            Some(ps) => {
                if ps.len() != self.n_agents {
                    err(
                        "world.initial_positions",
                        format!("{} positions for {} agents", ps.len(), self.n_agents),
                    );
                }
                if ps.iter().any(|p| p.len() != POS_DIM) {
                    err("world.initial_positions", format!("each position needs {POS_DIM} coordinates"));
                }
            }
            None => {
                if w.init_min.len() == POS_DIM && w.init_max.len() == POS_DIM {
                    let area: f64 = w.init_min.iter().zip(&w.init_max).map(|(lo, hi)| hi - lo).product();
                    let s = self.min_spacing();
                    let packable = area / (s * s * 3f64.sqrt() / 2.0).max(f64::MIN_POSITIVE);
                    if s > 0.0 && (self.n_agents as f64) > 0.5 * packable {
                        out.push(Issue::warning(
                            "world",
                            format!(
                                "{} agents with spacing {s} m may not fit the initial region",
                                self.n_agents
                            ),
                        ));
                    }
                }
            }
        }

        let mut targets = Vec::new();
        for (idx, c) in self.compromises.iter().enumerate() {
            let field = format!("compromise[{idx}]");
            if c.target >= self.n_agents {
                out.push(Issue::error(
                    &field,
                    format!("target {} out of range for {} agents", c.target, self.n_agents),
                ));
            }
            if targets.contains(&c.target) {
                out.push(Issue::error(&field, format!("agent {} compromised twice", c.target)));
            }
            targets.push(c.target);
            if c.start_k >= self.max_steps {
                out.push(Issue::error(
                    &field,
                    format!("start_k {} is not before max_steps {}", c.start_k, self.max_steps),
                ));
            }
            if let Err(e) = c.validate(POS_DIM) {
                out.push(Issue::error(&field, e.to_string()));
            }
        }

        if self.n_agents < POS_DIM + 2 {
            out.push(Issue::warning(
                "n_agents",
                format!(
                    "{} agents: a compromised agent may not find {} trusted anchors for multilateration",
                    self.n_agents,
                    POS_DIM + 1
                ),
            ));
        }
        if self.channel.delta_c < self.control.delta_u {
            out.push(Issue::warning(
                "channel.delta_c",
                "communication range is shorter than the control range".into(),
            ));
        }
        out
    }

    pub fn has_errors(&self) -> bool {
        self.validate().iter().any(|i| i.severity == Severity::Error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl Issue {
    fn error(field: &str, message: String) -> Self {
        Self {
            severity: Severity::Error,
            field: field.to_string(),
            message,
        }
    }

    fn warning(field: &str, message: String) -> Self {
        Self {
            severity: Severity::Warning,
            field: field.to_string(),
            message,
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}
