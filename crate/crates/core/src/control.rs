//! Proximity-based formation control with a virtual spring-damper mesh.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

pub type ControlGraph = Graph;

/// Gains and geometry of the spring-damper consensus law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams<T> {
    /// Desired inter-agent distance (m).
    pub l_des: T,
    /// Control neighbour range (m).
    pub delta_u: T,
    /// Spring gain (1/s²).
    pub k_s: T,
    /// Relative-velocity damper gain (1/s).
    pub k_d: T,
    /// Goal attraction gain (1/s²).
    pub k_g: T,
    /// Absolute velocity damping (1/s).
    pub c_v: T,
    /// Per-axis input saturation (m/s²).
    pub u_max: T,
}

impl<T: Scalar> ControlParams<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        for (name, v) in [("k_s", self.k_s), ("k_d", self.k_d), ("k_g", self.k_g), ("c_v", self.c_v)] {
            if !(v >= zero) {
                return Err(invalid(name, "gains must be non-negative"));
            }
        }
        if !(self.l_des > zero) {
            return Err(invalid("l_des", "must be positive"));
        }
        if !(self.delta_u >= self.l_des) {
            return Err(invalid("delta_u", "must be at least l_des"));
        }
        if !(self.u_max > zero) {
            return Err(invalid("u_max", "must be positive"));
        }
        Ok(())
    }
}

/// Builds the control graph from (estimated) positions.
pub fn build_control_graph<T: Scalar>(positions: &[DVector<T>], delta_u: T) -> ControlGraph {
    Graph::proximity(positions, delta_u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput<T: Scalar> {
    pub u: DVector<T>,
    /// A neighbour sat on top of this agent; its spring used the +x axis.
    pub coincident_neighbor: bool,
    /// At least one axis hit `u_max`.
    pub saturated: bool,
}

const COINCIDENT_EPS: f64 = 1e-9;

/// Spring-damper consensus input for one agent.
///
/// States are laid out as `[p (D), v (D), ...]`; `x_ref` is the goal state.
/// `u = Σ_j [k_s(‖p_j − p_i‖ − l_des) û_ij + k_d (v_j − v_i)] + k_g (p_ref − p_i) − c_v v_i`,
/// clamped per axis to `±u_max`.
pub fn spring_damper_control<'a, T: Scalar>(
    self_est: &DVector<T>,
    neighbor_ests: impl IntoIterator<Item = &'a DVector<T>>,
    x_ref: &DVector<T>,
    params: &ControlParams<T>,
    pos_dim: usize,
) -> Result<ControlOutput<T>> {
    let d = pos_dim;
    if self_est.len() < 2 * d {
        return Err(invalid("pos_dim", "state must hold position and velocity"));
    }
    check_dim("control: reference state", self_est.len(), x_ref.len())?;
    let p_i = self_est.rows(0, d);
    let v_i = self_est.rows(d, d);

    let mut u = DVector::<T>::zeros(d);
    let mut coincident = false;
    for est in neighbor_ests {
        check_dim("control: neighbour state", self_est.len(), est.len())?;
        let offset = est.rows(0, d) - p_i;
        let dist = offset.norm();
        let dir = if dist < T::lit(COINCIDENT_EPS) {
            coincident = true;
            let mut e = DVector::zeros(d);
            e[0] = T::one();
            e
        } else {
            offset / dist
        };
        u += dir * (params.k_s * (dist - params.l_des));
        u += (est.rows(d, d) - v_i) * params.k_d;
    }
    u += (x_ref.rows(0, d) - p_i) * params.k_g;
    u -= v_i * params.c_v;

    let mut saturated = false;
    for q in u.iter_mut() {
        if *q > params.u_max {
            *q = params.u_max;
            saturated = true;
        } else if *q < -params.u_max {
            *q = -params.u_max;
            saturated = true;
        }
    }
    Ok(ControlOutput {
        u,
        coincident_neighbor: coincident,
        saturated,
    })
}
