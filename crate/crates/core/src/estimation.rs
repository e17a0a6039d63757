//! Kalman filtering in nominal and recovered mode.
//!
//! In recovered mode the position rows of the output model measure the RSSI
//! fix directly (`C̄ = [I_D | 0]` on those rows) and their covariance `R̄` is
//! learned online. The robust estimator never touches the compromised
//! position estimate: it compares consecutive fixes through the model,
//! `r̄ = p̄(k) − [A x̄(k−1) + B u(k−1)]_pos` with `x̄(k−1) = [p̄(k−1); x̂_rest]`,
//! whose covariance balances to `2 R̄ + 2 Q̄`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{symmetrize, LtiModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nominal,
    Recovered,
}

/// Output of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct KfUpdate<T: Scalar> {
    /// `y − C_eff x̂(k|k−1)`
    pub innovation: DVector<T>,
    /// `C_eff P(k|k−1) C_effᵀ + R_eff`
    pub innovation_cov: DMatrix<T>,
    pub gain: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: Scalar> {
    pub xhat: DVector<T>,
    pub p: DMatrix<T>,
    pub mode: Mode,
    pub c_eff: DMatrix<T>,
    pub r_eff: DMatrix<T>,
}

impl<T: Scalar> KalmanState<T> {
    /// Nominal-mode filter using the model's `C` and `R`.
    pub fn new(model: &LtiModel<T>, xhat: DVector<T>, p: DMatrix<T>) -> Result<Self> {
        let n = model.state_dim();
        check_dim("initial estimate", n, xhat.len())?;
        check_dim("initial covariance rows", n, p.nrows())?;
        check_dim("initial covariance columns", n, p.ncols())?;
        Ok(Self {
            xhat,
            p,
            mode: Mode::Nominal,
            c_eff: model.c().clone(),
            r_eff: model.r().clone(),
        })
    }

    /// `x̂ ← A x̂ + B u`, `P ← A P Aᵀ + Q`
    pub fn predict(&mut self, model: &LtiModel<T>, u: &DVector<T>) -> Result<()> {
        self.xhat = model.propagate(&self.xhat, u, None)?;
        let a = model.a();
        self.p = a * &self.p * a.transpose() + model.q();
        symmetrize(&mut self.p);
        Ok(())
    }

    /// Measurement update in Joseph form, followed by symmetrization.
    pub fn update(&mut self, y: &DVector<T>) -> Result<KfUpdate<T>> {
        let c = &self.c_eff;
        check_dim("measurement", c.nrows(), y.len())?;
        let n = self.xhat.len();
        let mut s = c * &self.p * c.transpose() + &self.r_eff;
        symmetrize(&mut s);
        let chol = s.clone().cholesky().ok_or(Error::Singular("innovation covariance"))?;
        // K = P Cᵀ S⁻¹, via S Kᵀ = C P
        let gain = chol.solve(&(c * &self.p)).transpose();
        let innovation = y - c * &self.xhat;
        self.xhat += &gain * &innovation;
        let i_kc = DMatrix::identity(n, n) - &gain * c;
        self.p = &i_kc * &self.p * i_kc.transpose() + &gain * &self.r_eff * gain.transpose();
        symmetrize(&mut self.p);
        Ok(KfUpdate {
            innovation,
            innovation_cov: s,
            gain,
        })
    }

    /// Switches to recovered mode: position rows become `[I_D | 0]` and the
    /// position block of `R_eff` becomes `r_pos`. The estimate is untouched.
    pub fn enter_recovery(&mut self, model: &LtiModel<T>, r_pos: &DMatrix<T>) -> Result<()> {
        self.c_eff = reconfigure_output(model);
        self.r_eff = assemble_r_full(r_pos, &model.r_rest())?;
        self.mode = Mode::Recovered;
        Ok(())
    }

    /// Replaces the position block of `R_eff`.
    pub fn set_position_covariance(&mut self, r_pos: &DMatrix<T>) -> Result<()> {
        let d = r_pos.nrows();
        let rest = self.r_eff.nrows() - d;
        let r_rest = self.r_eff.view((d, d), (rest, rest)).into_owned();
        self.r_eff = assemble_r_full(r_pos, &r_rest)?;
        Ok(())
    }
}

/// `C̄`: the first `D` rows replaced by `[I_D | 0]`, the rest copied from `C`.
pub fn reconfigure_output<T: Scalar>(model: &LtiModel<T>) -> DMatrix<T> {
    let mut c = model.c().clone();
    for q in 0..model.pos_dim() {
        c.row_mut(q).fill(T::zero());
        c[(q, q)] = T::one();
    }
    c
}

/// Block-diagonal `[R̄, 0; 0, Ř]`.
pub fn assemble_r_full<T: Scalar>(r_bar: &DMatrix<T>, r_rest: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_dim("R̄ (square)", r_bar.nrows(), r_bar.ncols())?;
    check_dim("Ř (square)", r_rest.nrows(), r_rest.ncols())?;
    let (d, rest) = (r_bar.nrows(), r_rest.nrows());
    let mut out = DMatrix::zeros(d + rest, d + rest);
    out.view_mut((0, 0), (d, d)).copy_from(r_bar);
    out.view_mut((d, d), (rest, rest)).copy_from(r_rest);
    Ok(out)
}

/// `(1 − γ) Σ̄ + γ r rᵀ`
pub fn update_residual_covariance<T: Scalar>(sigma: &DMatrix<T>, r: &DVector<T>, gamma: T) -> DMatrix<T> {
    let mut next = sigma * (T::one() - gamma) + r * r.transpose() * gamma;
    symmetrize(&mut next);
    next
}

/// Symmetric matrix with every eigenvalue raised to at least `floor`.
pub fn floor_eigenvalues<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| if l < floor { floor } else { l });
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// `R̄ = (Σ̄ − 2 Q̄) / 2`, eigenvalue-floored at `r_floor`.
pub fn extract_r<T: Scalar>(sigma: &DMatrix<T>, q_bar: &DMatrix<T>, r_floor: T) -> DMatrix<T> {
    let raw = (sigma - q_bar * T::lit(2.0)) * T::lit(0.5);
    floor_eigenvalues(&raw, r_floor)
}

/// Rolling estimate of the RSSI-fix covariance that avoids the position
/// estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveCovState<T: Scalar> {
    pub sigma_bar: DMatrix<T>,
    pub gamma: T,
    pub q_bar: DMatrix<T>,
    /// `x̄(k−1) = [p̄(k−1); x̂_rest(k−1|k−1)]`; absent before the first fix
    /// or after a step without one.
    pub prev_correction_state: Option<DVector<T>>,
    pub r_floor: T,
}

impl<T: Scalar> AdaptiveCovState<T> {
    pub fn new(sigma_bar: DMatrix<T>, gamma: T, q_bar: DMatrix<T>, r_floor: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        if !(r_floor > T::zero()) {
            return Err(invalid("r_floor", "must be positive"));
        }
        check_dim("Σ̄ vs Q̄", q_bar.nrows(), sigma_bar.nrows())?;
        Ok(Self {
            sigma_bar,
            gamma,
            q_bar,
            prev_correction_state: None,
            r_floor,
        })
    }

    /// `r̄ = p̄(k) − [A x̄(k−1) + B u(k−1)]_pos`, or `None` without a previous fix.
    pub fn rssi_residual(&self, fix: &DVector<T>, model: &LtiModel<T>, u_prev: &DVector<T>) -> Result<Option<DVector<T>>> {
        let Some(prev) = &self.prev_correction_state else {
            return Ok(None);
        };
        check_dim("RSSI fix", model.pos_dim(), fix.len())?;
        let pred = model.propagate(prev, u_prev, None)?;
        Ok(Some(fix - model.position(&pred)))
    }

    pub fn update(&mut self, r: &DVector<T>) {
        self.sigma_bar = update_residual_covariance(&self.sigma_bar, r, self.gamma);
    }

    pub fn r_bar(&self) -> DMatrix<T> {
        extract_r(&self.sigma_bar, &self.q_bar, self.r_floor)
    }

    /// Stores `x̄(k) = [p̄(k); x̂_rest(k|k)]` for the next residual.
    pub fn remember(&mut self, fix: &DVector<T>, xhat_post: &DVector<T>) {
        let mut x = xhat_post.clone();
        x.rows_mut(0, fix.len()).copy_from(fix);
        self.prev_correction_state = Some(x);
    }

    pub fn forget(&mut self) {
        self.prev_correction_state = None;
    }
}

/// Baseline covariance matching on the post-fit measurement residual
/// `ε = ȳ − C̄ x̂(k|k)`: `R ← (1 − γ) R + γ (ε εᵀ + C̄ P(k|k) C̄ᵀ)` on the
/// position block. It trusts the filter's own (possibly compromised)
/// estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationCovState<T: Scalar> {
    pub r_pos: DMatrix<T>,
    pub gamma: T,
    pub r_floor: T,
}

impl<T: Scalar> InnovationCovState<T> {
    pub fn new(r_pos: DMatrix<T>, gamma: T, r_floor: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        Ok(Self { r_pos, gamma, r_floor })
    }

    /// Uses the filter state right after its update with `y`.
    pub fn update(&mut self, kf: &KalmanState<T>, y: &DVector<T>) -> DMatrix<T> {
        let d = self.r_pos.nrows();
        let eps = (y - &kf.c_eff * &kf.xhat).rows(0, d).into_owned();
        let cpc = (&kf.c_eff * &kf.p * kf.c_eff.transpose()).view((0, 0), (d, d)).into_owned();
        let sample = &eps * eps.transpose() + cpc;
        let mut next = &self.r_pos * (T::one() - self.gamma) + sample * self.gamma;
        symmetrize(&mut next);
        self.r_pos = floor_eigenvalues(&next, self.r_floor);
        self.r_pos.clone()
    }
}
