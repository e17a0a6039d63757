//! Discrete-time LTI agent dynamics and output model.
//!
//! Every agent evolves as `x' = A x + B u + ν` and is observed through
//! `y = C x + η`, with `ν ~ N(0, Q)` and `η ~ N(0, R)`. The first `D` state
//! entries are the position; the first `D` outputs measure it.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};
use crate::scalar::Scalar;

pub type StateVector<T> = DVector<T>;
pub type OutputVector<T> = DVector<T>;
pub type InputVector<T> = DVector<T>;

/// Homogeneous agent model shared by the whole swarm.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
    pos_dim: usize,
}

impl<T: Scalar> LtiModel<T> {
    /// Builds a model after checking shapes, `Q, R ≻ 0`, `D ≤ n`, `D ≤ N_s`
    /// and that `C` has full row rank.
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        pos_dim: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("A (square)", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("C columns", n, c.ncols())?;
        let ns = c.nrows();
        check_dim("Q rows", n, q.nrows())?;
        check_dim("Q columns", n, q.ncols())?;
        check_dim("R rows", ns, r.nrows())?;
        check_dim("R columns", ns, r.ncols())?;
        if pos_dim == 0 || pos_dim > n || pos_dim > ns {
            return Err(invalid(
                "pos_dim",
                format!("need 1 <= D <= min(n={n}, N_s={ns}), got {pos_dim}"),
            ));
        }
        if !is_spd(&q) {
            return Err(invalid("Q", "must be symmetric positive definite"));
        }
        if !is_spd(&r) {
            return Err(invalid("R", "must be symmetric positive definite"));
        }
        if ns > n || c.clone().svd(false, false).rank(T::tol(1e-10)) < ns {
            return Err(invalid("C", "must have full row rank"));
        }
        Ok(Self {
            a,
            b,
            c,
            q,
            r,
            pos_dim,
        })
    }

    /// Planar double integrator with state `[px, py, vx, vy]`, input
    /// `[ax, ay]` and full-state measurement.
    pub fn double_integrator(dt: T, q_pos: T, q_vel: T, r_pos: T, r_vel: T) -> Result<Self> {
        let zero = T::zero();
        for (name, v) in [
            ("dt", dt),
            ("q_pos", q_pos),
            ("q_vel", q_vel),
            ("r_pos", r_pos),
            ("r_vel", r_vel),
        ] {
            if !(v > zero) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive, got {}", v.as_f64())));
            }
        }
        let half_dt2 = dt * dt / T::lit(2.0);
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = half_dt2;
        b[(1, 1)] = half_dt2;
        b[(2, 0)] = dt;
        b[(3, 1)] = dt;
        let c = DMatrix::identity(4, 4);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![q_pos, q_pos, q_vel, q_vel]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![r_pos, r_pos, r_vel, r_vel]));
        Self::new(a, b, c, q, r, 2)
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    /// `n`
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `N_m`
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `N_s`
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `D`
    pub fn pos_dim(&self) -> usize {
        self.pos_dim
    }

    /// Position block of `Q`.
    pub fn q_pos(&self) -> DMatrix<T> {
        let d = self.pos_dim;
        self.q.view((0, 0), (d, d)).into_owned()
    }

    /// Covariance of the sensors that are not position sensors.
    pub fn r_rest(&self) -> DMatrix<T> {
        let d = self.pos_dim;
        let rest = self.output_dim() - d;
        self.r.view((d, d), (rest, rest)).into_owned()
    }

    /// `A x + B u + noise`
    pub fn propagate(
        &self,
        x: &StateVector<T>,
        u: &InputVector<T>,
        noise: Option<&StateVector<T>>,
    ) -> Result<StateVector<T>> {
        check_dim("propagate: state", self.state_dim(), x.len())?;
        check_dim("propagate: input", self.input_dim(), u.len())?;
        let mut next = &self.a * x + &self.b * u;
        if let Some(w) = noise {
            check_dim("propagate: process noise", self.state_dim(), w.len())?;
            next += w;
        }
        Ok(next)
    }

    /// `C x + noise`
    pub fn measure(&self, x: &StateVector<T>, noise: Option<&OutputVector<T>>) -> Result<OutputVector<T>> {
        check_dim("measure: state", self.state_dim(), x.len())?;
        let mut y = &self.c * x;
        if let Some(v) = noise {
            check_dim("measure: sensor noise", self.output_dim(), v.len())?;
            y += v;
        }
        Ok(y)
    }

    /// Position entries of a state vector.
    pub fn position(&self, x: &StateVector<T>) -> DVector<T> {
        x.rows(0, self.pos_dim).into_owned()
    }
}

/// Symmetric (to a relative tolerance) and Cholesky-factorizable.
pub fn is_spd<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax();
    let tol = T::tol(1e-12) * (scale + T::one());
    if (m - m.transpose()).amax() > tol {
        return false;
    }
    m.clone().cholesky().is_some()
}

pub(crate) fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    let t = m.transpose();
    *m += t;
    *m *= half;
}
