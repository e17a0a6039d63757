//! Monte Carlo batches over seeds and variants.

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::Moments;
use super::{run_scenario, RunSummary, ScenarioConfig, SimError, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    /// Mean of `E(k)` across runs, per step (NaN where no run had edges).
    pub mean_formation_error: Vec<f64>,
    pub std_formation_error: Vec<f64>,
    /// Time-averaged post-attack formation error of each run, in run order.
    pub post_attack_formation_error: Vec<f64>,
    /// Pooled per-axis estimation error variance of compromised agents,
    /// `E[e²]` about zero (the quantity the filter covariance describes).
    pub error_variance_x: Option<f64>,
    pub error_variance_y: Option<f64>,
    /// The same samples centred on their pooled mean.
    pub error_spread_x: Option<f64>,
    pub error_spread_y: Option<f64>,
    /// Fraction of runs with every agent inside the goal radius at the end.
    pub all_within_goal: f64,
    /// Fraction of compromised agents that self-detected.
    pub detection_rate: f64,
    /// Uncompromised agents that entered recovered mode, summed over runs.
    pub false_recoveries: usize,
    #[serde(skip)]
    pub run_summaries: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub base_seed: u64,
    pub variants: Vec<VariantSummary>,
}

impl MonteCarloSummary {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Runs `runs` seeds (`seed + run index`) of every variant.
pub fn monte_carlo(cfg: &ScenarioConfig, variants: &[Variant], runs: usize) -> Result<MonteCarloSummary, SimError> {
    if runs == 0 {
        return Err(SimError::Config("runs must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let per_run: Vec<(RunSummary, Vec<Option<f64>>)> = (0..runs)
            .into_par_iter()
            .map(|r| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(r as u64);
                run_scenario(&c, variant).map(|o| {
                    let e = o.trace.iter().map(|s| s.formation_error).collect();
                    (o.summary, e)
                })
            })
            .collect::<Result<_, _>>()?;
        out.push(aggregate(variant, per_run));
    }
    Ok(MonteCarloSummary {
        runs,
        base_seed: cfg.seed,
        variants: out,
    })
}

fn aggregate(variant: Variant, per_run: Vec<(RunSummary, Vec<Option<f64>>)>) -> VariantSummary {
    let runs = per_run.len();
    let steps = per_run.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
    let mut per_step = vec![Moments::default(); steps];
    for (_, series) in &per_run {
        for (m, e) in per_step.iter_mut().zip(series) {
            if let Some(v) = e {
                m.push(*v);
            }
        }
    }
    let mean_formation_error = per_step.iter().map(|m| m.mean().unwrap_or(f64::NAN)).collect();
    let std_formation_error = per_step
        .iter()
        .map(|m| m.variance().map_or(f64::NAN, f64::sqrt))
        .collect();

    let mut ex = Moments::default();
    let mut ey = Moments::default();
    let mut within = 0usize;
    let mut compromised = 0usize;
    let mut detected = 0usize;
    let mut false_recoveries = 0usize;
    let mut post = Vec::with_capacity(runs);
    let mut summaries = Vec::with_capacity(runs);
    for (s, _) in per_run {
        ex.merge(&s.error_x);
        ey.merge(&s.error_y);
        within += usize::from(s.agents.iter().all(|a| a.within_goal));
        for a in &s.agents {
            if a.compromise.is_some() {
                compromised += 1;
                detected += usize::from(a.detected_at.is_some());
            } else if a.recovered_steps > 0 {
                false_recoveries += 1;
            }
        }
        post.push(s.mean_formation_error_post_attack.unwrap_or(f64::NAN));
        summaries.push(s);
    }
    VariantSummary {
        variant,
        runs,
        mean_formation_error,
        std_formation_error,
        post_attack_formation_error: post,
        error_variance_x: ex.mean_square(),
        error_variance_y: ey.mean_square(),
        error_spread_x: ex.variance(),
        error_spread_y: ey.variance(),
        all_within_goal: within as f64 / runs as f64,
        detection_rate: if compromised > 0 {
            detected as f64 / compromised as f64
        } else {
            0.0
        },
        false_recoveries,
        run_summaries: summaries,
    }
}
