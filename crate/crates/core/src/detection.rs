//! Chi-squared residual monitoring with a runtime alarm-rate test.
//!
//! Each residual `r` (on-board or inter-agent) is reduced to `z = rᵀ Σ̄⁻¹ r`.
//! An alarm fires when `z > τ`, the alarm rate is tracked as an exponential
//! moving average `â`, and the detector is anomalous while `â` leaves
//! `[T₋, T₊]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{symmetrize, LtiModel};
use crate::scalar::Scalar;
use crate::special::{inv_reg_lower_gamma, probit};

const RICCATI_MAX_ITER: usize = 1_000_000;

/// Steady-state filter quantities of the nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCovariances<T: Scalar> {
    /// Prior covariance `P∞` (fixed point of predict/update).
    pub p_prior: DMatrix<T>,
    /// Posterior covariance after the steady-state update.
    pub p_post: DMatrix<T>,
    /// Steady-state gain `K` (n × N_s).
    pub gain: DMatrix<T>,
    /// `Σ = C P∞ Cᵀ + R`
    pub sigma_full: DMatrix<T>,
    /// Leading D × D block of `Σ`.
    pub sigma_pos: DMatrix<T>,
    /// Diagonal inter-agent residual covariance `Σ_ij`.
    pub sigma_interagent: DMatrix<T>,
    /// Position block of `Σ_ij`.
    pub sigma_interagent_pos: DMatrix<T>,
}

/// Steady-state prior covariance `P∞` and the derived residual covariances.
///
/// `P∞` is the fixed point of the covariance recursion
/// `P ← A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ + Q`, reached with the doubling
/// form of that recursion (iterate `k` holds `P` after `2ᵏ` plain steps), so
/// lightly damped cases with tiny `Q` converge as fast as the rest. Iteration
/// stops once the relative change drops below 1e-12.
///
/// The inter-agent covariance uses the diagonal of `Σ` as the per-sensor
/// variances of the neighbour, since a broadcast correction is `K` times the
/// neighbour's innovation.
pub fn steady_state_residual_covariance<T: Scalar>(model: &LtiModel<T>) -> Result<ResidualCovariances<T>> {
    let (a, c, q, r) = (model.a(), model.c(), model.q(), model.r());
    let n = model.state_dim();
    let tol = T::tol(1e-12);
    let eye = DMatrix::<T>::identity(n, n);
    let r_inv = r.clone().try_inverse().ok_or(Error::Singular("R"))?;
    let mut ak = a.transpose();
    let mut gk = c.transpose() * r_inv * c;
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let w_inv = (&eye + &gk * &p).try_inverse().ok_or(Error::Singular("Riccati doubling step"))?;
        let a_w = &ak * &w_inv;
        let mut next = &p + ak.transpose() * &p * &w_inv * &ak;
        symmetrize(&mut next);
        let mut g_next = &gk + &a_w * &gk * ak.transpose();
        symmetrize(&mut g_next);
        ak = &a_w * &ak;
        gk = g_next;
        let change = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        if change <= tol * scale {
            converged = true;
            break;
        }
    }
    if !converged || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence {
            what: "discrete Riccati iteration",
            iterations: RICCATI_MAX_ITER,
        });
    }
    let mut sigma_full = c * &p * c.transpose() + r;
    symmetrize(&mut sigma_full);
    let s_inv = sigma_full
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("innovation covariance"))?;
    let gain = &p * c.transpose() * s_inv;
    let mut p_post = (DMatrix::identity(n, n) - &gain * c) * &p;
    symmetrize(&mut p_post);
    let d = model.pos_dim();
    let sigma_pos = sigma_full.view((0, 0), (d, d)).into_owned();
    let sigma_interagent = inter_agent_covariance(&gain, &sigma_full.diagonal())?;
    let sigma_interagent_pos = sigma_interagent.view((0, 0), (d, d)).into_owned();
    Ok(ResidualCovariances {
        p_prior: p,
        p_post,
        gain,
        sigma_full,
        sigma_pos,
        sigma_interagent,
        sigma_interagent_pos,
    })
}

/// `z = rᵀ Σ̄⁻¹ r`
pub fn chi_square_test_measure<T: Scalar>(r: &DVector<T>, sigma: &DMatrix<T>) -> Result<T> {
    check_dim("test measure: covariance", r.len(), sigma.nrows())?;
    check_dim("test measure: covariance", r.len(), sigma.ncols())?;
    let chol = sigma.clone().cholesky().ok_or(Error::Singular("residual covariance"))?;
    let z = r.dot(&chol.solve(r));
    Ok(if z < T::zero() { T::zero() } else { z })
}

/// Model prediction of a neighbour's next estimate, `A x̂_j + B u_j`.
pub fn inter_agent_predict<T: Scalar>(model: &LtiModel<T>, xhat_j: &DVector<T>, u_j: &DVector<T>) -> Result<DVector<T>> {
    model.propagate(xhat_j, u_j, None)
}

/// Diagonal covariance with entries `Σ_s (K_qs σ_s)²`, where `σ_s²` are the
/// given sensor variances.
pub fn inter_agent_covariance<T: Scalar>(gain: &DMatrix<T>, sensor_variances: &DVector<T>) -> Result<DMatrix<T>> {
    check_dim("inter-agent covariance: sensors", gain.ncols(), sensor_variances.len())?;
    let diag = DVector::from_fn(gain.nrows(), |q, _| {
        gain.row(q)
            .iter()
            .zip(sensor_variances.iter())
            .fold(T::zero(), |acc, (k, v)| acc + *k * *k * *v)
    });
    Ok(DMatrix::from_diagonal(&diag))
}

/// Threshold with `P(χ²(dof) > τ) = a_des`: `τ = 2 P⁻¹(1 − a_des, dof/2)`.
pub fn tune_threshold<T: Scalar>(a_des: T, dof: usize) -> Result<T> {
    if !(a_des > T::zero() && a_des < T::one()) {
        return Err(invalid("a_des", "must lie in (0, 1)"));
    }
    if dof == 0 {
        return Err(invalid("dof", "must be at least 1"));
    }
    let half_dof = T::from_usize_lossy(dof) * T::lit(0.5);
    Ok(T::lit(2.0) * inv_reg_lower_gamma(T::one() - a_des, half_dof)?)
}

/// `â + (ζ − â)/ℓ`, clamped to `[0, 1]`.
pub fn update_alarm_rate<T: Scalar>(a_hat: T, alarm: bool, ell: usize) -> T {
    let zeta = if alarm { T::one() } else { T::zero() };
    let next = a_hat + (zeta - a_hat) / T::from_usize_lossy(ell.max(1));
    next.clamp(T::zero(), T::one())
}

/// `T± = a_des ± |Φ⁻¹(α/2)| √(a_des (1 − a_des) / (2ℓ − 1))`
pub fn detection_bounds<T: Scalar>(a_des: T, alpha: T, ell: usize) -> Result<(T, T)> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    if ell == 0 {
        return Err(invalid("ell", "must be at least 1"));
    }
    let z = probit(alpha * T::lit(0.5))?.abs();
    let denom = T::from_usize_lossy(2 * ell - 1);
    let margin = z * (a_des * (T::one() - a_des) / denom).sqrt();
    Ok((a_des - margin, a_des + margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Nominal,
    Anomalous,
}

/// Closed-interval bounds test.
pub fn classify<T: Scalar>(a_hat: T, bounds: (T, T)) -> Verdict {
    if a_hat >= bounds.0 && a_hat <= bounds.1 {
        Verdict::Nominal
    } else {
        Verdict::Anomalous
    }
}

/// Tuning of one detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    /// Design false-alarm rate.
    pub a_des: T,
    /// Significance level of the bounds.
    pub alpha: T,
    /// Alarm-rate averaging window.
    pub ell: usize,
    /// Consecutive anomalous steps required before the detector latches.
    /// `1` latches on the first out-of-bounds step.
    #[serde(default = "default_persistence")]
    pub persistence: usize,
}

fn default_persistence() -> usize {
    1
}

impl<T: Scalar> DetectorParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_des > T::zero() && self.a_des < T::one()) {
            return Err(invalid("a_des", "must lie in (0, 1)"));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        if self.ell == 0 {
            return Err(invalid("ell", "must be at least 1"));
        }
        if self.persistence == 0 {
            return Err(invalid("persistence", "must be at least 1"));
        }
        Ok(())
    }
}

/// Result of feeding one test measure to a [`DetectorState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStep<T> {
    pub z: T,
    pub alarm: bool,
    pub a_hat: T,
    pub verdict: Verdict,
    /// True once the detector has latched (this step or earlier).
    pub latched: bool,
}

/// Alarm-rate monitor for one residual stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState<T: Scalar> {
    pub a_des: T,
    pub tau: T,
    pub alpha: T,
    pub ell: usize,
    pub a_hat: T,
    pub bounds: (T, T),
    persistence: usize,
    out_of_bounds_run: usize,
    latched: bool,
}

impl<T: Scalar> DetectorState<T> {
    /// Starts with `â = a_des`.
    pub fn new(params: &DetectorParams<T>, dof: usize) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            a_des: params.a_des,
            tau: tune_threshold(params.a_des, dof)?,
            alpha: params.alpha,
            ell: params.ell,
            a_hat: params.a_des,
            bounds: detection_bounds(params.a_des, params.alpha, params.ell)?,
            persistence: params.persistence,
            out_of_bounds_run: 0,
            latched: false,
        })
    }

    pub fn observe(&mut self, z: T) -> DetectorStep<T> {
        let alarm = z > self.tau;
        self.a_hat = update_alarm_rate(self.a_hat, alarm, self.ell);
        let verdict = classify(self.a_hat, self.bounds);
        if verdict == Verdict::Anomalous {
            self.out_of_bounds_run += 1;
            if self.out_of_bounds_run >= self.persistence {
                self.latched = true;
            }
        } else {
            self.out_of_bounds_run = 0;
        }
        DetectorStep {
            z,
            alarm,
            a_hat: self.a_hat,
            verdict,
            latched: self.latched,
        }
    }

    /// Resets `â` to `a_des`; the latch is kept.
    pub fn reset_rate(&mut self) {
        self.a_hat = self.a_des;
        self.out_of_bounds_run = 0;
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }
}
