//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

mod common;

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use resilient_swarm::channel::{sample_rssi, ChannelParams};
use resilient_swarm::detection::{
    chi_square_test_measure, detection_bounds, steady_state_residual_covariance, tune_threshold,
};
use resilient_swarm::localization::{
    bias_compensate, build_linear_system, estimate_distance_raw, hyperbolic_weighting, rssi_position_fix, sigma_d,
    wls_position, AnchorObservation,
};
use resilient_swarm::sim::{monte_carlo, run_scenario, MonteCarloSummary, ScenarioConfig, Variant};
use resilient_swarm::LtiModel64;

/// Criteria run one at a time so their runtimes are not inflated by each other.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "{} criterion {n} ({name}): {detail}; runtime {:.1} s (budget {} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn channel(sigma2_shadow: f64) -> ChannelParams<f64> {
    ChannelParams {
        p_tx: 20.0,
        pl_d0: 40.0,
        d0: 1.0,
        beta: 2.0,
        sigma2_shadow,
        delta_c: 40.0,
    }
}

#[test]
fn criterion_1_threshold_calibration() {
    let _g = exclusive();
    let t0 = Instant::now();
    let model = LtiModel64::double_integrator(0.1, 1e-5, 1e-3, 25.0, 0.01).unwrap();
    let sigma = steady_state_residual_covariance(&model).unwrap().sigma_pos;
    let sigma = sigma + DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
    let n = 100_000;
    let mut rng = common::rng(1);
    let draws: Vec<f64> = (0..n)
        .map(|_| chi_square_test_measure(&common::gaussian(&mut rng, &sigma), &sigma).unwrap())
        .collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for a_des in [0.01, 0.05, 0.1] {
        let tau = tune_threshold(a_des, 2).unwrap();
        let rate = draws.iter().filter(|z| **z > tau).count() as f64 / n as f64;
        let se = (a_des * (1.0 - a_des) / n as f64).sqrt();
        pass &= (rate - a_des).abs() <= 3.0 * se;
        detail.push(format!("a_des {a_des}: rate {rate:.5} (±{:.5})", 3.0 * se));
    }
    let ok = report(1, "threshold calibration", pass, detail.join(", "), t0.elapsed(), Duration::from_secs(5));
    assert!(ok);
}

#[test]
fn criterion_2_detection_bounds_calibration() {
    let _g = exclusive();
    let t0 = Instant::now();
    let cfg = ScenarioConfig {
        max_steps: 1000,
        compromises: vec![],
        ..Default::default()
    };
    let (lo, hi) = detection_bounds(cfg.detector.a_des, cfg.detector.alpha, cfg.detector.ell).unwrap();
    let (mut outside, mut total) = (0usize, 0usize);
    for r in 0..100u64 {
        let c = ScenarioConfig {
            seed: cfg.seed + r,
            ..cfg.clone()
        };
        let out = run_scenario(&c, Variant::NoRecovery).unwrap();
        for step in &out.trace {
            for a in &step.agents {
                total += 1;
                outside += usize::from(!(a.a_hat >= lo && a.a_hat <= hi));
            }
        }
    }
    let frac = outside as f64 / total as f64;
    let ok = report(
        2,
        "detection-bounds calibration",
        frac <= 0.02,
        format!("{outside}/{total} agent-steps outside [{lo:.4}, {hi:.4}] = {:.3}% (limit 2%)", 100.0 * frac),
        t0.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

#[test]
fn criterion_3_wls_matches_derivative_free_oracle() {
    let _g = exclusive();
    let t0 = Instant::now();
    let mut rng = common::rng(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 200 {
        let m = 3 + done % 9;
        let target = DVector::from_vec(vec![rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]);
        let anchors: Vec<DVector<f64>> = (0..m)
            .map(|_| DVector::from_vec(vec![rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)]))
            .collect();
        let d: Vec<f64> = anchors
            .iter()
            .map(|a| (a - &target).norm() * (0.15 * common::std_normal(&mut rng)).exp())
            .collect();
        if d.iter().any(|v| *v < 1.0) {
            continue;
        }
        let (w, _) = hyperbolic_weighting(&d, 0.15).unwrap();
        let problem = build_linear_system(&anchors, &d).unwrap().with_weighting(w).unwrap();
        let Ok(sol) = wls_position(&problem) else {
            continue;
        };
        if sol.ill_conditioned {
            continue;
        }
        let start = anchors.iter().fold(DVector::zeros(2), |acc, a| acc + a) / m as f64;
        let oracle = common::nelder_mead(
            |p| problem.objective(&DVector::from_column_slice(p)).unwrap(),
            start.as_slice(),
            5.0,
            1e-10,
        );
        let err = (sol.position[0] - oracle[0]).abs().max((sol.position[1] - oracle[1]).abs());
        worst = worst.max(err);
        done += 1;
    }
    let ok = report(
        3,
        "WLS oracle equivalence",
        worst <= 1e-6,
        format!("200 instances, max coordinate gap {worst:.2e} (limit 1e-6)"),
        t0.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}

#[test]
fn criterion_4_bias_compensation() {
    let _g = exclusive();
    let t0 = Instant::now();
    let params = channel(2.0);
    let sd = sigma_d(&params).unwrap();
    let d = 10.0;
    let analytic_bias = d * ((sd * sd / 2.0).exp() - 1.0);
    let n = 100_000;
    let mut rng = common::rng(4);
    let (mut raw_sum, mut comp_sum) = (0.0, 0.0);
    for _ in 0..n {
        let rx = sample_rssi(d, &params, params.sigma_shadow() * common::std_normal(&mut rng)).unwrap();
        let raw = estimate_distance_raw(rx, &params);
        raw_sum += raw;
        comp_sum += bias_compensate(raw, d, sd).unwrap().0;
    }
    let (raw_mean, comp_mean) = (raw_sum / n as f64, comp_sum / n as f64);
    let closed_form = 10.0 * ((2f64.sqrt() * 10f64.ln() / 20.0).powi(2) / 2.0).exp_m1();
    let pass = (analytic_bias - closed_form).abs() < 1e-12
        && (analytic_bias - 0.13341).abs() < 1e-4
        && (raw_mean - 10.133).abs() <= 0.01
        && (comp_mean - 10.0).abs() <= 0.02;
    let ok = report(
        4,
        "bias compensation",
        pass,
        format!("analytic bias {analytic_bias:.5}, raw mean {raw_mean:.4}, compensated mean {comp_mean:.4}"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

#[test]
fn criterion_5_adaptive_covariance_convergence() {
    let _g = exclusive();
    let t0 = Instant::now();
    let s = common::synthetic_fix_covariance();
    let errors: Vec<f64> = (0..50u64)
        .map(|seed| {
            let run = common::adaptive_synthetic(500 + seed, 2000, &s, 1e-4, 0.01);
            (&run.r_bar - &s).norm() / s.norm()
        })
        .collect();
    let good = errors.iter().filter(|e| **e < 0.2).count();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let ok = report(
        5,
        "adaptive covariance convergence",
        good * 10 >= 50 * 9,
        format!(
            "{good}/50 seeds with relative error < 0.2 (need 45); median {:.3}, 90th percentile {:.3}",
            sorted[25], sorted[44]
        ),
        t0.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

/// One 100-seed batch at the default scenario, shared by the ordering and
/// variance criteria, with the time it took.
fn default_batch() -> &'static (MonteCarloSummary, Duration) {
    static BATCH: OnceLock<(MonteCarloSummary, Duration)> = OnceLock::new();
    BATCH.get_or_init(|| {
        let t0 = Instant::now();
        let variants = [Variant::NoRecovery, Variant::RecoveryNoRUpdate, Variant::RecoveryRobustR];
        let mc = monte_carlo(&ScenarioConfig::default(), &variants, 100).unwrap();
        (mc, t0.elapsed())
    })
}

#[test]
fn criterion_6_divert_and_recover() {
    let _g = exclusive();
    let t0 = Instant::now();
    let cfg = ScenarioConfig::default();
    let mc = monte_carlo(&cfg, &[Variant::NoRecovery, Variant::RecoveryRobustR], 50).unwrap();
    let far = 2.0 * cfg.world.goal_radius;
    let diverted = mc.variant(Variant::NoRecovery).unwrap().run_summaries
        .iter()
        .filter(|r| {
            r.agents
                .iter()
                .filter(|a| a.compromise.is_some() && a.final_goal_distance > far)
                .count()
                >= 5
        })
        .count();
    let recovered = mc.variant(Variant::RecoveryRobustR).unwrap().run_summaries
        .iter()
        .filter(|r| r.agents.iter().all(|a| a.within_goal))
        .count();
    let ok = report(
        6,
        "divert without recovery, regroup with robust recovery",
        diverted >= 45 && recovered >= 45,
        format!("no_recovery: {diverted}/50 seeds with >=5 of 7 beyond {far} m; recovery_robust_R: {recovered}/50 seeds with all 12 inside the goal"),
        t0.elapsed(),
        Duration::from_secs(180),
    );
    assert!(ok);
}

#[test]
fn criterion_7_formation_error_ordering() {
    let _g = exclusive();
    let t0 = Instant::now();
    let (mc, batch) = default_batch();
    let elapsed = t0.elapsed().max(*batch);
    let post = |v| &mc.variant(v).unwrap().post_attack_formation_error;
    let (rb, nu, nr) = (
        post(Variant::RecoveryRobustR),
        post(Variant::RecoveryNoRUpdate),
        post(Variant::NoRecovery),
    );
    let wins = |a: &[f64], b: &[f64]| a.iter().zip(b).filter(|(x, y)| x < y).count();
    let (w1, w2) = (wins(rb, nu), wins(nu, nr));
    let (p1, p2) = (common::sign_test_p(w1, 100), common::sign_test_p(w2, 100));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ok = report(
        7,
        "post-attack formation error ordering",
        p1 < 0.05 && p2 < 0.05,
        format!(
            "mean E robust {:.3} < no_R_update {:.3} < no_recovery {:.3}; robust<no_update {w1}/100 (p={p1:.1e}), no_update<no_recovery {w2}/100 (p={p2:.1e})",
            mean(rb),
            mean(nu),
            mean(nr)
        ),
        elapsed,
        Duration::from_secs(600),
    );
    assert!(ok);
}

#[test]
fn criterion_8_estimation_error_variance() {
    let _g = exclusive();
    let t0 = Instant::now();
    let (mc, batch) = default_batch();
    let elapsed = t0.elapsed().max(*batch);
    let rb = mc.variant(Variant::RecoveryRobustR).unwrap();
    let nu = mc.variant(Variant::RecoveryNoRUpdate).unwrap();
    let rx = rb.error_variance_x.unwrap() / nu.error_variance_x.unwrap();
    let ry = rb.error_variance_y.unwrap() / nu.error_variance_y.unwrap();
    let ok = report(
        8,
        "estimation error variance trend",
        rx <= 0.8 && ry <= 0.8,
        format!(
            "robust ({:.3}, {:.3}) vs no update ({:.3}, {:.3}) m^2, ratio ({rx:.3}, {ry:.3}) (limit 0.8); spread about the mean ratio ({:.3}, {:.3})",
            rb.error_variance_x.unwrap(),
            rb.error_variance_y.unwrap(),
            nu.error_variance_x.unwrap(),
            nu.error_variance_y.unwrap(),
            rb.error_spread_x.unwrap() / nu.error_spread_x.unwrap(),
            rb.error_spread_y.unwrap() / nu.error_spread_y.unwrap()
        ),
        elapsed,
        Duration::from_secs(600),
    );
    assert!(ok);
}

#[test]
fn criterion_9_zero_noise_identities() {
    let _g = exclusive();
    let t0 = Instant::now();
    let params = channel(0.0);
    let mut rng = common::rng(9);
    let mut worst_fix = 0.0f64;
    for _ in 0..200 {
        let target = DVector::from_vec(vec![rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]);
        let m = rng.random_range(3..10);
        let obs: Vec<AnchorObservation<f64>> = (0..m)
            .map(|id| {
                let r = rng.random_range(2.0..35.0);
                let th = std::f64::consts::TAU * (id as f64 + rng.random_range(0.0..0.5)) / m as f64;
                let position = &target + DVector::from_vec(vec![r * th.cos(), r * th.sin()]);
                AnchorObservation {
                    id,
                    rx_power: sample_rssi(r, &params, 0.0).unwrap(),
                    position,
                }
            })
            .collect();
        let (fix, _) = rssi_position_fix(None, &obs, |_| true, &params, 2).unwrap();
        worst_fix = worst_fix.max((fix - &target).amax());
    }

    let side = 8.0;
    let mut positions = vec![vec![0.0, 0.0]];
    for q in 0..6 {
        let a = std::f64::consts::FRAC_PI_3 * q as f64;
        positions.push(vec![side * a.cos(), side * a.sin()]);
    }
    let mut cfg = ScenarioConfig {
        n_agents: 7,
        max_steps: 100,
        disable_noise: true,
        compromises: vec![],
        ..Default::default()
    };
    cfg.control.k_g = 0.0;
    cfg.world.goal = vec![0.0, 0.0];
    cfg.world.initial_positions = Some(positions);
    let out = run_scenario(&cfg, Variant::RecoveryRobustR).unwrap();
    let worst_e = out
        .trace
        .iter()
        .map(|s| s.formation_error.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let ok = report(
        9,
        "zero-noise identities",
        worst_fix <= 1e-6 && worst_e < 1e-9 && out.trace.len() == 100,
        format!("max fix error {worst_fix:.2e} m over 200 geometries; max formation error {worst_e:.2e} over 100 steps"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}
