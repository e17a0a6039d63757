//! RSSI multilateration against trusted neighbours.
//!
//! Received powers are inverted to distances, de-biased for the log-normal
//! shadowing, and the circle equations `‖p − p_m‖² = d_m²` are linearized by
//! subtracting the pivot anchor's equation. The resulting system `Ω p = φ` is
//! solved by weighted least squares with the hyperbolic weighting matrix.

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelParams;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Condition number of the normal equations above which a fix is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Distance to one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate<T: Scalar> {
    pub anchor_id: usize,
    /// Bias-compensated distance (m).
    pub d_hat: T,
    /// Uncompensated distance (m).
    pub d_raw: T,
    /// Reference distance used for the bias and weighting (m).
    pub d_ref: T,
    pub sigma_d: T,
    pub anchor_pos: DVector<T>,
    /// Compensation would have gone non-positive and was clamped.
    pub clamped: bool,
}

/// `d0 · 10^((P_tx − rx − PL(d0)) / (10 β))`
pub fn estimate_distance_raw<T: Scalar>(rx_power: T, params: &ChannelParams<T>) -> T {
    let path_loss = params.p_tx - rx_power;
    params.d0 * T::lit(10.0).powf((path_loss - params.pl_d0) / (T::lit(10.0) * params.beta))
}

/// Log-normal shape of the distance estimate, `σ_Λ ln 10 / (10 β)`.
pub fn sigma_d<T: Scalar>(params: &ChannelParams<T>) -> Result<T> {
    if !(params.beta > T::zero()) {
        return Err(crate::error::invalid("beta", "must be positive"));
    }
    Ok(params.sigma_shadow() * T::ln_10() / (T::lit(10.0) * params.beta))
}

/// Subtracts the expected bias `d_ref (exp(σ_d²/2) − 1)`.
///
/// Returns the compensated distance and whether it had to be clamped to
/// `0.01 d_ref`.
pub fn bias_compensate<T: Scalar>(d_raw: T, d_ref: T, sigma_d: T) -> Result<(T, bool)> {
    if !(d_ref > T::zero()) || !d_ref.is_finite() {
        return Err(Error::InvalidDistance(d_ref.as_f64()));
    }
    let bias = d_ref * ((sigma_d * sigma_d * T::lit(0.5)).exp() - T::one());
    let d = d_raw - bias;
    if d > T::zero() {
        Ok((d, false))
    } else {
        Ok((d_ref * T::lit(0.01), true))
    }
}

/// Linearized multilateration system `Ω p = φ` with weighting `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilaterationProblem<T: Scalar> {
    pub omega: DMatrix<T>,
    pub phi: DVector<T>,
    pub w: DMatrix<T>,
    /// Anchor count `M`.
    pub m: usize,
}

impl<T: Scalar> MultilaterationProblem<T> {
    pub fn with_weighting(mut self, w: DMatrix<T>) -> Result<Self> {
        check_dim("weighting rows", self.phi.len(), w.nrows())?;
        check_dim("weighting columns", self.phi.len(), w.ncols())?;
        self.w = w;
        Ok(self)
    }

    /// Weighted objective `(Ω p − φ)ᵀ W⁻¹ (Ω p − φ)`.
    pub fn objective(&self, p: &DVector<T>) -> Result<T> {
        let chol = self.w.clone().cholesky().ok_or(Error::Singular("weighting matrix"))?;
        let e = &self.omega * p - &self.phi;
        Ok(e.dot(&chol.solve(&e)))
    }
}

/// Rows `2 (p_m − p_1)ᵀ` and entries `d_1² − d_m² + ‖p_m‖² − ‖p_1‖²`; anchor 0
/// is the pivot. `W` starts as the identity.
pub fn build_linear_system<T: Scalar>(anchors: &[DVector<T>], distances: &[T]) -> Result<MultilaterationProblem<T>> {
    check_dim("anchor distances", anchors.len(), distances.len())?;
    let m = anchors.len();
    let dim = anchors.first().map_or(0, |a| a.len());
    if dim == 0 {
        return Err(Error::InsufficientAnchors { found: m, required: 1 });
    }
    if m < dim + 1 {
        return Err(Error::InsufficientAnchors {
            found: m,
            required: dim + 1,
        });
    }
    for a in anchors {
        check_dim("anchor position", dim, a.len())?;
    }
    let two = T::lit(2.0);
    let p1 = &anchors[0];
    let b1 = p1.norm_squared();
    let d1_sq = distances[0] * distances[0];
    let mut omega = DMatrix::zeros(m - 1, dim);
    let mut phi = DVector::zeros(m - 1);
    for (row, (pm, dm)) in anchors.iter().zip(distances).skip(1).enumerate() {
        for c in 0..dim {
            omega[(row, c)] = two * (pm[c] - p1[c]);
        }
        phi[row] = d1_sq - *dm * *dm + pm.norm_squared() - b1;
    }
    Ok(MultilaterationProblem {
        omega,
        phi,
        w: DMatrix::identity(m - 1, m - 1),
        m,
    })
}

/// Variance of a squared log-normal distance with `μ = ln d`:
/// `d⁴ (exp(8σ²) − exp(4σ²))`.
pub fn squared_distance_variance<T: Scalar>(d: T, sigma_d: T) -> T {
    let s2 = sigma_d * sigma_d;
    let d2 = d * d;
    d2 * d2 * ((T::lit(8.0) * s2).exp() - (T::lit(4.0) * s2).exp())
}

/// Hyperbolic weighting `W_pq = V_1 + δ_pq V_{p+1}`.
///
/// With `σ_d = 0` every `V` vanishes; the identity is returned instead and
/// the flag is set.
pub fn hyperbolic_weighting<T: Scalar>(distances: &[T], sigma_d: T) -> Result<(DMatrix<T>, bool)> {
    let m = distances.len();
    if m < 2 {
        return Err(Error::InsufficientAnchors { found: m, required: 2 });
    }
    if let Some(d) = distances.iter().find(|d| !(**d > T::zero())) {
        return Err(Error::InvalidDistance(d.as_f64()));
    }
    if !(sigma_d > T::zero()) {
        return Ok((DMatrix::identity(m - 1, m - 1), true));
    }
    let v: Vec<T> = distances.iter().map(|d| squared_distance_variance(*d, sigma_d)).collect();
    let mut w = DMatrix::from_element(m - 1, m - 1, v[0]);
    for p in 0..m - 1 {
        w[(p, p)] += v[p + 1];
    }
    Ok((w, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution<T: Scalar> {
    pub position: DVector<T>,
    /// Condition number of the whitened normal matrix.
    pub condition: T,
    pub ill_conditioned: bool,
}

/// `p = (Ωᵀ W⁻¹ Ω)⁻¹ Ωᵀ W⁻¹ φ`, computed on the whitened system.
pub fn wls_position<T: Scalar>(problem: &MultilaterationProblem<T>) -> Result<WlsSolution<T>> {
    let rows = problem.phi.len();
    check_dim("omega rows", rows, problem.omega.nrows())?;
    check_dim("weighting rows", rows, problem.w.nrows())?;
    let dim = problem.omega.ncols();
    let chol = problem.w.clone().cholesky().ok_or(Error::Singular("weighting matrix"))?;
    let l = chol.l();
    let omega_w = l.solve_lower_triangular(&problem.omega).ok_or(Error::Singular("weighting matrix"))?;
    let phi_w = l.solve_lower_triangular(&problem.phi).ok_or(Error::Singular("weighting matrix"))?;

    let sv = omega_w.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if sv.len() < dim || !(smax > T::zero()) || smin <= smax * T::tol(1e-10) {
        return Err(Error::SingularGeometry);
    }
    let ratio = smax / smin;
    let condition = ratio * ratio;

    let normal = omega_w.transpose() * &omega_w;
    let rhs = omega_w.transpose() * phi_w;
    let position = normal
        .cholesky()
        .ok_or(Error::SingularGeometry)?
        .solve(&rhs);
    Ok(WlsSolution {
        position,
        condition,
        ill_conditioned: condition > T::lit(ILL_CONDITIONED),
    })
}

/// RSSI observation of one neighbour, paired with its broadcast position.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorObservation<T: Scalar> {
    pub id: usize,
    pub position: DVector<T>,
    pub rx_power: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixDiagnostics<T: Scalar> {
    /// Trusted anchors used (`M`).
    pub anchors: usize,
    pub condition: T,
    pub ill_conditioned: bool,
    /// Anchors whose compensated distance was clamped.
    pub clamped: usize,
    /// Zero shadowing: identity weighting used.
    pub unweighted: bool,
    pub distances: Vec<DistanceEstimate<T>>,
}

/// Full pipeline: trusted-anchor filtering, distance inversion, bias
/// compensation, linearization about the nearest anchor, hyperbolic WLS.
///
/// `self_position` is the agent's own position estimate used for the
/// reference distances; `None` falls back to the raw distances.
pub fn rssi_position_fix<T: Scalar>(
    self_position: Option<&DVector<T>>,
    observations: &[AnchorObservation<T>],
    is_trusted: impl Fn(usize) -> bool,
    params: &ChannelParams<T>,
    pos_dim: usize,
) -> Result<(DVector<T>, FixDiagnostics<T>)> {
    let sd = sigma_d(params)?;
    let mut estimates = Vec::with_capacity(observations.len());
    for obs in observations.iter().filter(|o| is_trusted(o.id)) {
        check_dim("anchor position", pos_dim, obs.position.len())?;
        let d_raw = estimate_distance_raw(obs.rx_power, params);
        let d_ref = match self_position {
            Some(p) => {
                check_dim("self position", pos_dim, p.len())?;
                let d = (p - &obs.position).norm();
                if d > T::EPS {
                    d
                } else {
                    d_raw
                }
            }
            None => d_raw,
        };
        let (d_hat, clamped) = bias_compensate(d_raw, d_ref, sd)?;
        estimates.push(DistanceEstimate {
            anchor_id: obs.id,
            d_hat,
            d_raw,
            d_ref,
            sigma_d: sd,
            anchor_pos: obs.position.clone(),
            clamped,
        });
    }
    if estimates.len() < pos_dim + 1 {
        return Err(Error::InsufficientAnchors {
            found: estimates.len(),
            required: pos_dim + 1,
        });
    }
    let pivot = estimates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.d_hat.partial_cmp(&b.1.d_hat).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    estimates.swap(0, pivot);

    let positions: Vec<DVector<T>> = estimates.iter().map(|e| e.anchor_pos.clone()).collect();
    let d_hat: Vec<T> = estimates.iter().map(|e| e.d_hat).collect();
    let d_ref: Vec<T> = estimates.iter().map(|e| e.d_ref).collect();
    let (w, unweighted) = hyperbolic_weighting(&d_ref, sd)?;
    let problem = build_linear_system(&positions, &d_hat)?.with_weighting(w)?;
    let sol = wls_position(&problem)?;
    let diag = FixDiagnostics {
        anchors: estimates.len(),
        condition: sol.condition,
        ill_conditioned: sol.ill_conditioned,
        clamped: estimates.iter().filter(|e| e.clamped).count(),
        unweighted,
        distances: estimates,
    };
    Ok((sol.position, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_rssi;

    fn params(sigma2: f64) -> ChannelParams<f64> {
        ChannelParams {
            p_tx: 20.0,
            pl_d0: 40.0,
            d0: 1.0,
            beta: 2.0,
            sigma2_shadow: sigma2,
            delta_c: 40.0,
        }
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn raw_distance_examples() {
        let p = params(2.0);
        assert_close!(estimate_distance_raw(p.p_tx - p.pl_d0, &p), 1.0, 1e-15);
        assert_close!(estimate_distance_raw(-40.0, &p), 10.0, 1e-12);
        for d in [1.0, 5.0, 20.0, 50.0] {
            let rx = sample_rssi(d, &p, 0.0).unwrap();
            assert_close!(estimate_distance_raw(rx, &p), d, 1e-9);
        }
    }

    #[test]
    fn sigma_d_examples() {
        let exact = 2f64.sqrt() * 10f64.ln() / 20.0;
        assert_close!(sigma_d(&params(2.0)).unwrap(), exact, 1e-15);
        assert_close!(sigma_d(&params(2.0)).unwrap(), 0.162_804, 2e-5);
        assert_eq!(sigma_d(&params(0.0)).unwrap(), 0.0);
        let mut p = params(2.0);
        p.beta = 4.0;
        assert_close!(sigma_d(&p).unwrap(), exact / 2.0, 1e-15);
        p.beta = 0.0;
        assert!(sigma_d(&p).is_err());
    }

    #[test]
    fn bias_compensation_examples() {
        assert_eq!(bias_compensate(7.3, 10.0, 0.0).unwrap(), (7.3, false));
        let (d, clamped) = bias_compensate(10.0, 10.0, 0.162_804).unwrap();
        assert!(!clamped);
        assert_close!(10.0 - d, 0.133_41, 1e-5);
        let (d, clamped) = bias_compensate(0.1, 10.0, 0.5).unwrap();
        assert!(clamped);
        assert_close!(d, 0.1, 1e-15);
        assert!(bias_compensate(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn worked_linear_system() {
        let anchors = [v(&[0.0, 0.0]), v(&[10.0, 0.0]), v(&[0.0, 10.0])];
        let d = [5.0, 65f64.sqrt(), 45f64.sqrt()];
        let prob = build_linear_system(&anchors, &d).unwrap();
        assert_eq!(prob.omega, DMatrix::from_row_slice(2, 2, &[20.0, 0.0, 0.0, 20.0]));
        assert_close!(prob.phi[0], 60.0, 1e-12);
        assert_close!(prob.phi[1], 80.0, 1e-12);
        let sol = wls_position(&prob).unwrap();
        assert_close!(sol.position[0], 3.0, 1e-12);
        assert_close!(sol.position[1], 4.0, 1e-12);
        assert!(!sol.ill_conditioned);

        let w = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let sol = wls_position(&prob.clone().with_weighting(w).unwrap()).unwrap();
        assert_close!(sol.position[0], 3.0, 1e-12);
        assert_close!(sol.position[1], 4.0, 1e-12);
        // the true point zeroes the residual
        assert!((&prob.omega * v(&[3.0, 4.0]) - &prob.phi).amax() < 1e-12);
    }

    #[test]
    fn too_few_or_collinear_anchors() {
        let err = build_linear_system(&[v(&[0.0, 0.0]), v(&[1.0, 0.0])], &[1.0, 1.0]).unwrap_err();
        assert_eq!(err, Error::InsufficientAnchors { found: 2, required: 3 });
        let collinear = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[2.0, 0.0])];
        let prob = build_linear_system(&collinear, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(wls_position(&prob).unwrap_err(), Error::SingularGeometry);
    }

    #[test]
    fn weighting_structure() {
        let sd: f64 = 0.162_804;
        let (w, flag) = hyperbolic_weighting(&[10.0; 4], sd).unwrap();
        assert!(!flag);
        let vv = squared_distance_variance(10.0, sd);
        assert_close!(vv, 1e4 * ((8.0 * sd * sd).exp() - (4.0 * sd * sd).exp()), 1e-9);
        assert_close!(vv, 1244.06, 1.0);
        let expected = (DMatrix::identity(3, 3) + DMatrix::from_element(3, 3, 1.0)) * vv;
        assert!((w - expected).amax() < 1e-9);

        let d = [4.0, 7.0, 12.0, 30.0];
        let (w, _) = hyperbolic_weighting(&d, sd).unwrap();
        let v1 = squared_distance_variance(4.0, sd);
        for p in 0..3 {
            for q in 0..3 {
                if p != q {
                    assert_eq!(w[(p, q)], v1);
                }
            }
        }
        let (w, flag) = hyperbolic_weighting(&d, 0.0).unwrap();
        assert!(flag);
        assert_eq!(w, DMatrix::identity(3, 3));
        assert!(hyperbolic_weighting(&[1.0, -1.0], sd).is_err());
    }

    #[test]
    fn exact_fix_with_three_anchors() {
        let p = params(0.0);
        let truth = v(&[3.0, 4.0]);
        let anchors = [v(&[0.0, 0.0]), v(&[10.0, 0.0]), v(&[0.0, 10.0])];
        let obs: Vec<_> = anchors
            .iter()
            .enumerate()
            .map(|(id, a)| AnchorObservation {
                id,
                position: a.clone(),
                rx_power: sample_rssi((a - &truth).norm(), &p, 0.0).unwrap(),
            })
            .collect();
        let (fix, diag) = rssi_position_fix(Some(&truth), &obs, |_| true, &p, 2).unwrap();
        assert!((fix - &truth).norm() < 1e-3);
        assert_eq!(diag.anchors, 3);
        assert!(diag.unweighted);

        let err = rssi_position_fix(Some(&truth), &obs, |id| id != 1, &p, 2).unwrap_err();
        assert_eq!(err, Error::InsufficientAnchors { found: 2, required: 3 });
    }

    #[test]
    fn pivot_is_nearest_anchor() {
        let p = params(2.0);
        let truth = v(&[8.0, 9.0]);
        let anchors = [v(&[0.0, 0.0]), v(&[10.0, 10.0]), v(&[0.0, 15.0]), v(&[20.0, 0.0])];
        let obs: Vec<_> = anchors
            .iter()
            .enumerate()
            .map(|(id, a)| AnchorObservation {
                id,
                position: a.clone(),
                rx_power: sample_rssi((a - &truth).norm(), &p, 0.0).unwrap(),
            })
            .collect();
        let (_, diag) = rssi_position_fix(None, &obs, |_| true, &p, 2).unwrap();
        assert_eq!(diag.distances[0].anchor_id, 1);
    }

    #[test]
    fn single_precision_fix() {
        let anchors = [
            DVector::from_vec(vec![0.0f32, 0.0]),
            DVector::from_vec(vec![10.0, 0.0]),
            DVector::from_vec(vec![0.0, 10.0]),
        ];
        let d = [5.0f32, 65f32.sqrt(), 45f32.sqrt()];
        let sol = wls_position(&build_linear_system(&anchors, &d).unwrap()).unwrap();
        assert!((sol.position[0] - 3.0).abs() < 1e-4 && (sol.position[1] - 4.0).abs() < 1e-4);
    }
}
