#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw from `N(0, cov)`.
pub fn gaussian(rng: &mut ChaCha8Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().expect("covariance must be SPD").l();
    let z = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * z
}

pub fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Sample covariance about zero.
pub fn second_moment(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples[0].len();
    let mut acc = DMatrix::zeros(n, n);
    for s in samples {
        acc += s * s.transpose();
    }
    acc / samples.len() as f64
}

/// Derivative-free Nelder–Mead minimisation, restarted from the best vertex
/// until the simplex stops improving.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], scale: f64, tol: f64) -> Vec<f64> {
    let mut best = start.to_vec();
    let mut step = scale;
    for _ in 0..20 {
        let next = nm_pass(&f, &best, step, tol, 20_000);
        let moved = next.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        best = next;
        if moved < tol {
            break;
        }
        step = (moved * 10.0).max(tol * 10.0);
    }
    best
}

fn nm_pass(f: &impl Fn(&[f64]) -> f64, start: &[f64], scale: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < tol * 1e-3 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|d| centroid[d] + t * (simplex[n][d] - centroid[d])).collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = (0..n).map(|d| best[d] + 0.5 * (simplex[i][d] - best[d])).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    simplex[i].clone()
}

/// Binomial sign test: one-sided p-value of at least `wins` successes in
/// `n` fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut c = 1.0f64;
    let half_n = 0.5f64.powi(n as i32);
    for k in 0..=n {
        if k > 0 {
            c = c * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += c * half_n;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let x = nelder_mead(|v| (v[0] - 3.0).powi(2) + 10.0 * (v[1] + 1.0).powi(2), &[0.0, 0.0], 1.0, 1e-9);
        assert!((x[0] - 3.0).abs() < 1e-7 && (x[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn sign_test_reference() {
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(0, 10) - 1.0).abs() < 1e-12);
    }
}

pub struct AdaptiveRun {
    pub r_bar: DMatrix<f64>,
    /// Time average of `Σ̄` over the second half of the run.
    pub sigma_bar_mean: DMatrix<f64>,
    pub residuals: Vec<DVector<f64>>,
}

/// Recovered-mode filter fed position fixes `p + n`, `n ~ N(0, s)`, with the
/// robust covariance estimator in the loop. The true system has position
/// process noise `q_pos` and no velocity noise.
pub fn adaptive_synthetic(seed: u64, steps: usize, s: &DMatrix<f64>, q_pos: f64, gamma: f64) -> AdaptiveRun {
    use resilient_swarm::detection::steady_state_residual_covariance;
    use resilient_swarm::estimation::{AdaptiveCovState, KalmanState};
    use resilient_swarm::LtiModel64;

    let model = LtiModel64::double_integrator(0.1, q_pos, 1e-8, 0.04, 0.01).unwrap();
    let ss = steady_state_residual_covariance(&model).unwrap();
    let mut rng = rng(seed);
    let mut x = DVector::from_vec(vec![0.0, 0.0, 0.5, -0.3]);
    let mut kf = KalmanState::new(&model, x.clone(), ss.p_post.clone()).unwrap();
    let mut est = AdaptiveCovState::new(&ss.sigma_pos * 2.0, gamma, model.q_pos(), 1e-4).unwrap();
    kf.enter_recovery(&model, &est.r_bar()).unwrap();
    let u = DVector::from_vec(vec![0.0, 0.0]);
    let q_true = DMatrix::from_diagonal(&DVector::from_vec(vec![q_pos, q_pos]));
    let mut residuals = Vec::with_capacity(steps);
    let mut acc = DMatrix::zeros(2, 2);
    let mut counted = 0;
    for k in 0..steps {
        let w_pos = gaussian(&mut rng, &q_true);
        x = model.propagate(&x, &u, None).unwrap();
        x[0] += w_pos[0];
        x[1] += w_pos[1];
        let mut y = model.measure(&x, Some(&gaussian(&mut rng, model.r()))).unwrap();
        let fix = x.rows(0, 2) + gaussian(&mut rng, s);
        y.rows_mut(0, 2).copy_from(&fix);
        kf.predict(&model, &u).unwrap();
        if let Some(r) = est.rssi_residual(&fix, &model, &u).unwrap() {
            est.update(&r);
            residuals.push(r);
        }
        kf.set_position_covariance(&est.r_bar()).unwrap();
        kf.update(&y).unwrap();
        est.remember(&fix, &kf.xhat);
        if k >= steps / 2 {
            acc += &est.sigma_bar;
            counted += 1;
        }
    }
    AdaptiveRun {
        r_bar: est.r_bar(),
        sigma_bar_mean: acc / counted.max(1) as f64,
        residuals,
    }
}

pub fn synthetic_fix_covariance() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 2.5])
}
