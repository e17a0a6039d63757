//! Synchronous-round closed-loop simulation of the swarm.
//!
//! One call to [`Simulation::step`] advances every agent from time `k` to
//! `k + 1`:
//!
//! 1. every agent broadcasts `(x̂(k|k), u(k−1))`;
//! 2. the communication graph is built on true positions;
//! 3. control inputs from estimates and trusted in-range broadcasts;
//! 4. true states propagate;
//! 5. sensors measure and compromises are applied;
//! 6. nominal agents predict, test their position residual, update;
//! 7. recovered agents take an RSSI fix and run the adaptive filter;
//! 8. neighbour monitors test every broadcast against its model prediction;
//! 9. the step is recorded.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ScenarioConfig, POS_DIM};
use super::metrics::formation_error;
use super::trace::{AgentRecord, FixStatus, StepTrace};
use super::{SimError, Variant};
use crate::channel::{build_comm_graph, sample_rssi, CommGraph};
use crate::control::spring_damper_control;
use crate::detection::{chi_square_test_measure, steady_state_residual_covariance, DetectorState, ResidualCovariances};
use crate::error::Error;
use crate::estimation::{AdaptiveCovState, InnovationCovState, KalmanState, Mode};
use crate::graph::Graph;
use crate::localization::{rssi_position_fix, AnchorObservation};
use crate::model::LtiModel;
use crate::threat::{apply_compromise, CompromiseMemory, CompromiseSpec};

const STREAM_INIT: u64 = 0;
const STREAM_PROCESS: u64 = 1;
const STREAM_SENSOR: u64 = 2;
const STREAM_SHADOW: u64 = 3;
const STREAM_ESTIMATE: u64 = 4;

const PLACEMENT_ATTEMPTS: usize = 100_000;

/// Independent stream per (purpose, agent) so that every variant consumes
/// identical noise.
fn stream(seed: u64, purpose: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | agent as u64);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, chol: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * z
}

fn lower_cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, Error> {
    Ok(m.clone().cholesky().ok_or(Error::Singular(what))?.l())
}

struct Agent {
    x: DVector<f64>,
    kf: KalmanState<f64>,
    /// `u(k−1)`
    u_prev: DVector<f64>,
    onboard: DetectorState<f64>,
    detected_at: Option<usize>,
    /// Recovered mode, waiting for its first fix (reference distances fall
    /// back to the raw ones).
    first_fix_pending: bool,
    adaptive: AdaptiveCovState<f64>,
    matching: InnovationCovState<f64>,
    /// `𝒱_i^C`
    flagged: Vec<bool>,
    monitors: Vec<DetectorState<f64>>,
    compromise: Option<CompromiseSpec<f64>>,
    memory: CompromiseMemory<f64>,
    rng_process: ChaCha8Rng,
    rng_sensor: ChaCha8Rng,
    rng_shadow: ChaCha8Rng,
}

#[derive(Clone)]
struct Broadcast {
    xhat: DVector<f64>,
    u_prev: DVector<f64>,
}

/// One seeded closed-loop run.
pub struct Simulation {
    cfg: ScenarioConfig,
    variant: Variant,
    model: LtiModel<f64>,
    steady: ResidualCovariances<f64>,
    chol_q: DMatrix<f64>,
    chol_r: DMatrix<f64>,
    x_ref: DVector<f64>,
    agents: Vec<Agent>,
    prev_broadcast: Option<(Vec<Broadcast>, CommGraph)>,
    k: usize,
    trace: Vec<StepTrace>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, variant: Variant) -> Result<Self, SimError> {
        let problems: Vec<String> = cfg
            .validate()
            .into_iter()
            .filter(|i| i.severity == super::config::Severity::Error)
            .map(|i| i.to_string())
            .collect();
        if !problems.is_empty() {
            return Err(SimError::Config(problems.join("; ")));
        }
        let ctx = |source| SimError::Numeric {
            step: 0,
            agent: None,
            source,
        };
        let model = cfg.model().map_err(ctx)?;
        let steady = steady_state_residual_covariance(&model).map_err(ctx)?;
        let chol_q = lower_cholesky(model.q(), "Q").map_err(ctx)?;
        let chol_r = lower_cholesky(model.r(), "R").map_err(ctx)?;
        let chol_p0 = lower_cholesky(&steady.p_post, "steady-state covariance").map_err(ctx)?;
        let n = cfg.n_agents;
        let nx = model.state_dim();

        let positions = initial_positions(cfg)?;
        let onboard_params = cfg.detector;
        let monitor_params = cfg.interagent_params();
        let sigma0 = &steady.sigma_pos * 2.0;
        let r_nominal_pos = model.r().view((0, 0), (POS_DIM, POS_DIM)).into_owned();

        let mut agents = Vec::with_capacity(n);
        for (i, pos) in positions.into_iter().enumerate() {
            let mut x = DVector::zeros(nx);
            x.rows_mut(0, POS_DIM).copy_from(&pos);
            let xhat = if cfg.disable_noise {
                x.clone()
            } else {
                &x + gaussian(&mut stream(cfg.seed, STREAM_ESTIMATE, i), &chol_p0)
            };
            let kf = KalmanState::new(&model, xhat, steady.p_post.clone()).map_err(ctx)?;
            let monitor = DetectorState::new(&monitor_params, POS_DIM).map_err(ctx)?;
            agents.push(Agent {
                x,
                kf,
                u_prev: DVector::zeros(model.input_dim()),
                onboard: DetectorState::new(&onboard_params, POS_DIM).map_err(ctx)?,
                detected_at: None,
                first_fix_pending: false,
                adaptive: AdaptiveCovState::new(
                    sigma0.clone(),
                    cfg.estimation.gamma,
                    model.q_pos(),
                    cfg.estimation.r_floor,
                )
                .map_err(ctx)?,
                matching: InnovationCovState::new(r_nominal_pos.clone(), cfg.estimation.gamma, cfg.estimation.r_floor)
                    .map_err(ctx)?,
                flagged: vec![false; n],
                monitors: vec![monitor; n],
                compromise: cfg.compromises.iter().find(|c| c.target == i).cloned(),
                memory: CompromiseMemory::default(),
                rng_process: stream(cfg.seed, STREAM_PROCESS, i),
                rng_sensor: stream(cfg.seed, STREAM_SENSOR, i),
                rng_shadow: stream(cfg.seed, STREAM_SHADOW, i),
            });
        }

        let mut x_ref = DVector::zeros(nx);
        x_ref.rows_mut(0, POS_DIM).copy_from(&DVector::from_column_slice(&cfg.world.goal));

        Ok(Self {
            cfg: cfg.clone(),
            variant,
            model,
            steady,
            chol_q,
            chol_r,
            x_ref,
            agents,
            prev_broadcast: None,
            k: 0,
            trace: Vec::with_capacity(cfg.max_steps),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn model(&self) -> &LtiModel<f64> {
        &self.model
    }

    pub fn steady_state(&self) -> &ResidualCovariances<f64> {
        &self.steady
    }

    /// Current time index.
    pub fn time(&self) -> usize {
        self.k
    }

    pub fn trace(&self) -> &[StepTrace] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<StepTrace> {
        self.trace
    }

    pub fn true_states(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.x.clone()).collect()
    }

    pub fn estimates(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.kf.xhat.clone()).collect()
    }

    /// Runs the remaining steps up to `max_steps`.
    pub fn run(&mut self) -> Result<(), SimError> {
        while self.k < self.cfg.max_steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let k = self.k;
        let n = self.agents.len();
        let d = POS_DIM;
        let responds = self.variant.responds();
        let numeric = |agent: Option<usize>| {
            move |source| SimError::Numeric {
                step: k,
                agent,
                source,
            }
        };

        // (1) broadcasts and (2) communication graph
        let broadcast: Vec<Broadcast> = self
            .agents
            .iter()
            .map(|a| Broadcast {
                xhat: a.kf.xhat.clone(),
                u_prev: a.u_prev.clone(),
            })
            .collect();
        let true_pos: Vec<DVector<f64>> = self.agents.iter().map(|a| a.x.rows(0, d).into_owned()).collect();
        let comm = build_comm_graph(&true_pos, self.cfg.channel.delta_c);

        // (3) control
        let mut inputs = Vec::with_capacity(n);
        let mut control_edges = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let p_i = agent.kf.xhat.rows(0, d);
            let delta_u = self.cfg.control.delta_u;
            let used: Vec<usize> = comm
                .neighbors(i)
                .iter()
                .copied()
                .filter(|&j| !(responds && agent.flagged[j]))
                .filter(|&j| (broadcast[j].xhat.rows(0, d) - p_i).norm() <= delta_u)
                .collect();
            let out = spring_damper_control(
                &agent.kf.xhat,
                used.iter().map(|&j| &broadcast[j].xhat),
                &self.x_ref,
                &self.cfg.control,
                d,
            )
            .map_err(numeric(Some(i)))?;
            inputs.push(out.u);
            control_edges.extend(used.into_iter().map(|j| (i, j)));
        }
        let control_graph = Graph::from_edges(n, control_edges);

        // (4) propagation and (5) measurement
        let noisy = !self.cfg.disable_noise;
        let mut measurements = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let w = noisy.then(|| gaussian(&mut agent.rng_process, &self.chol_q));
            agent.x = self.model.propagate(&agent.x, &inputs[i], w.as_ref()).map_err(numeric(Some(i)))?;
            let eta = if noisy {
                gaussian(&mut agent.rng_sensor, &self.chol_r)
            } else {
                DVector::zeros(self.model.output_dim())
            };
            let mut y = self.model.measure(&agent.x, Some(&eta)).map_err(numeric(Some(i)))?;
            if let Some(spec) = &agent.compromise {
                let eta_pos = eta.rows(0, d).into_owned();
                y = apply_compromise(&y, &agent.x, spec, k + 1, &eta_pos, &mut agent.memory)
                    .map_err(numeric(Some(i)))?;
            }
            measurements.push(y);
        }
        let shadow: Vec<Vec<f64>> = self
            .agents
            .iter_mut()
            .map(|a| {
                (0..n)
                    .map(|_| {
                        if noisy {
                            a.rng_shadow.sample::<f64, _>(StandardNormal)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let new_pos: Vec<DVector<f64>> = self.agents.iter().map(|a| a.x.rows(0, d).into_owned()).collect();

        // (6) nominal filtering and on-board detection, (7) recovery
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let mut rec = AgentRecord::blank(k + 1, i);
            let sigma_shadow = self.cfg.channel.sigma_shadow();
            let agent = &mut self.agents[i];
            agent.kf.predict(&self.model, &inputs[i]).map_err(numeric(Some(i)))?;
            let y = &measurements[i];

            if agent.kf.mode == Mode::Nominal {
                let prior_pos = (&agent.kf.c_eff * &agent.kf.xhat).rows(0, d).into_owned();
                let r = y.rows(0, d) - prior_pos;
                let z = chi_square_test_measure(&r, &self.steady.sigma_pos).map_err(numeric(Some(i)))?;
                let step = agent.onboard.observe(z);
                rec.z = z;
                rec.alarm = step.alarm;
                rec.a_hat = step.a_hat;
                rec.anomalous = step.verdict == crate::detection::Verdict::Anomalous;
                if step.latched && agent.detected_at.is_none() {
                    agent.detected_at = Some(k + 1);
                    if responds {
                        let r0 = match self.variant {
                            Variant::RecoveryRobustR => agent.adaptive.r_bar(),
                            _ => agent.matching.r_pos.clone(),
                        };
                        agent.kf.enter_recovery(&self.model, &r0).map_err(numeric(Some(i)))?;
                        agent.onboard.reset_rate();
                        agent.first_fix_pending = true;
                    }
                }
                if agent.kf.mode == Mode::Nominal {
                    agent.kf.update(y).map_err(numeric(Some(i)))?;
                }
            } else {
                rec.a_hat = agent.onboard.a_hat;
            }

            if agent.kf.mode == Mode::Recovered {
                let observations: Vec<AnchorObservation<f64>> = comm
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        let pred = self
                            .model
                            .propagate(&broadcast[j].xhat, &broadcast[j].u_prev, None)
                            .map_err(numeric(Some(i)))?;
                        let dist = (&new_pos[i] - &new_pos[j]).norm();
                        let rx = sample_rssi(dist, &self.cfg.channel, shadow[i][j] * sigma_shadow)
                            .map_err(numeric(Some(i)))?;
                        Ok(AnchorObservation {
                            id: j,
                            position: pred.rows(0, d).into_owned(),
                            rx_power: rx,
                        })
                    })
                    .collect::<Result<_, SimError>>()?;
                let self_pos = (!agent.first_fix_pending).then(|| agent.kf.xhat.rows(0, d).into_owned());
                let flagged = &agent.flagged;
                match rssi_position_fix(self_pos.as_ref(), &observations, |j| !flagged[j], &self.cfg.channel, d) {
                    Ok((fix, diag)) => {
                        agent.first_fix_pending = false;
                        let mut y_rec = y.clone();
                        y_rec.rows_mut(0, d).copy_from(&fix);
                        match self.variant {
                            Variant::RecoveryRobustR => {
                                if let Some(r) = agent
                                    .adaptive
                                    .rssi_residual(&fix, &self.model, &inputs[i])
                                    .map_err(numeric(Some(i)))?
                                {
                                    agent.adaptive.update(&r);
                                }
                                let r_bar = agent.adaptive.r_bar();
                                agent.kf.set_position_covariance(&r_bar).map_err(numeric(Some(i)))?;
                                agent.kf.update(&y_rec).map_err(numeric(Some(i)))?;
                                agent.adaptive.remember(&fix, &agent.kf.xhat);
                            }
                            Variant::RecoveryNonrobustR => {
                                agent.kf.update(&y_rec).map_err(numeric(Some(i)))?;
                                let r_pos = agent.matching.update(&agent.kf, &y_rec);
                                agent.kf.set_position_covariance(&r_pos).map_err(numeric(Some(i)))?;
                            }
                            _ => {
                                agent.kf.update(&y_rec).map_err(numeric(Some(i)))?;
                            }
                        }
                        rec.fix = FixStatus::Ok;
                        rec.anchors = diag.anchors;
                        rec.condition = diag.condition;
                        rec.clamped = diag.clamped;
                        rec.fix_x = fix[0];
                        rec.fix_y = fix[1];
                    }
                    Err(Error::InsufficientAnchors { found, .. }) => {
                        agent.adaptive.forget();
                        rec.fix = FixStatus::NoFix;
                        rec.anchors = found;
                    }
                    Err(Error::SingularGeometry) => {
                        agent.adaptive.forget();
                        rec.fix = FixStatus::NoFix;
                    }
                    Err(e) => return Err(numeric(Some(i))(e)),
                }
            }
            records.push(rec);
        }

        // (8) neighbour monitoring
        if let Some((prev, prev_comm)) = &self.prev_broadcast {
            for i in 0..n {
                let agent = &mut self.agents[i];
                for &j in comm.neighbors(i) {
                    if !prev_comm.has_edge(i, j) || agent.flagged[j] {
                        continue;
                    }
                    let pred = self
                        .model
                        .propagate(&prev[j].xhat, &broadcast[j].u_prev, None)
                        .map_err(numeric(Some(i)))?;
                    let r = broadcast[j].xhat.rows(0, d) - pred.rows(0, d);
                    let z = chi_square_test_measure(&r, &self.steady.sigma_interagent_pos).map_err(numeric(Some(i)))?;
                    if agent.monitors[j].observe(z).latched && responds {
                        agent.flagged[j] = true;
                    }
                }
            }
        }
        self.prev_broadcast = Some((broadcast, comm));

        // (9) record
        let e = formation_error(&new_pos, control_graph.edges(), self.cfg.control.l_des);
        for (rec, agent) in records.iter_mut().zip(&self.agents) {
            rec.mode = agent.kf.mode;
            rec.compromised = agent.compromise.as_ref().is_some_and(|c| c.is_active(k + 1));
            rec.set_states(&agent.x, &agent.kf.xhat);
            rec.r_xx = agent.kf.r_eff[(0, 0)];
            rec.r_yy = agent.kf.r_eff[(1, 1)];
            rec.flagged = agent.flagged.iter().filter(|f| **f).count();
            rec.detected = agent.detected_at.is_some();
            rec.formation_error = e.unwrap_or(f64::NAN);
        }
        self.trace.push(StepTrace {
            k: k + 1,
            formation_error: e,
            agents: records,
        });
        self.k += 1;
        Ok(())
    }

    /// First step at which each agent's on-board detector latched.
    pub fn detection_steps(&self) -> Vec<Option<usize>> {
        self.agents.iter().map(|a| a.detected_at).collect()
    }

    /// Per-agent local accusation sets.
    pub fn flagged_sets(&self) -> Vec<Vec<usize>> {
        self.agents
            .iter()
            .map(|a| (0..a.flagged.len()).filter(|&j| a.flagged[j]).collect())
            .collect()
    }
}

fn initial_positions(cfg: &ScenarioConfig) -> Result<Vec<DVector<f64>>, SimError> {
    if let Some(ps) = &cfg.world.initial_positions {
        return Ok(ps.iter().map(|p| DVector::from_column_slice(p)).collect());
    }
    let mut rng = stream(cfg.seed, STREAM_INIT, 0);
    let spacing = cfg.min_spacing();
    let (lo, hi) = (&cfg.world.init_min, &cfg.world.init_max);
    let mut placed: Vec<DVector<f64>> = Vec::with_capacity(cfg.n_agents);
    let mut attempts = 0;
    while placed.len() < cfg.n_agents {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(SimError::Config(format!(
                "could not place {} agents {} m apart in the initial region",
                cfg.n_agents, spacing
            )));
        }
        let p = DVector::from_fn(POS_DIM, |q, _| rng.random_range(lo[q]..hi[q]));
        if placed.iter().all(|o| (o - &p).norm() >= spacing) {
            placed.push(p);
        }
    }
    Ok(placed)
}
