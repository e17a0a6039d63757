//! Cyber attacks and faults on on-board position sensors.
//!
//! A compromise adds an offset `ξ` to the position rows of the measurement:
//! `ỹ[0..D] = C[0..D] x + η[0..D] + ξ`. The remaining sensors are never touched.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompromiseKind<T> {
    /// Constant offset (m).
    Bias { offset: Vec<T> },
    /// Offset growing by `rate` metres per step. It points away from
    /// `divert_target`, so a controller that trusts the sensor drags the
    /// agent's true position toward the target.
    RampDivert { divert_target: Vec<T>, rate: T },
    /// Position readings frozen at their value at the start step.
    Stuck,
    /// Position noise amplified by `noise_scale`.
    NoiseInflation { noise_scale: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompromiseSpec<T> {
    pub target: usize,
    pub start_k: usize,
    #[serde(flatten)]
    pub kind: CompromiseKind<T>,
}

impl<T: Scalar> CompromiseSpec<T> {
    pub fn validate(&self, pos_dim: usize) -> Result<()> {
        match &self.kind {
            CompromiseKind::Bias { offset } => check_dim("bias offset", pos_dim, offset.len()),
            CompromiseKind::RampDivert { divert_target, rate } => {
                check_dim("divert target", pos_dim, divert_target.len())?;
                if !(*rate > T::zero()) {
                    return Err(invalid("rate", "ramp rate must be positive"));
                }
                Ok(())
            }
            CompromiseKind::Stuck => Ok(()),
            CompromiseKind::NoiseInflation { noise_scale } => {
                if !(*noise_scale > T::one()) {
                    return Err(invalid("noise_scale", "must exceed 1"));
                }
                Ok(())
            }
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.start_k
    }
}

/// Per-agent attack memory: the ramp direction and the frozen reading are
/// fixed the first time the attack is applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompromiseMemory<T: Scalar> {
    ramp_direction: Option<DVector<T>>,
    frozen: Option<DVector<T>>,
}

impl<T: Scalar> CompromiseMemory<T> {
    pub fn ramp_direction(&self) -> Option<&DVector<T>> {
        self.ramp_direction.as_ref()
    }
}

/// Applies `spec` at step `k` to the nominal measurement `y`.
///
/// `position_noise` is the position-sensor noise realization already folded
/// into `y`; only noise inflation uses it.
pub fn apply_compromise<T: Scalar>(
    y: &DVector<T>,
    x_true: &DVector<T>,
    spec: &CompromiseSpec<T>,
    k: usize,
    position_noise: &DVector<T>,
    memory: &mut CompromiseMemory<T>,
) -> Result<DVector<T>> {
    let d = position_noise.len();
    if d == 0 || d > y.len() || d > x_true.len() {
        return Err(invalid("position_noise", "length must be the position dimension"));
    }
    spec.validate(d)?;
    if !spec.is_active(k) {
        return Ok(y.clone());
    }
    let mut out = y.clone();
    match &spec.kind {
        CompromiseKind::Bias { offset } => {
            for (q, o) in offset.iter().enumerate() {
                out[q] += *o;
            }
        }
        CompromiseKind::RampDivert { divert_target, rate } => {
            let dir = memory.ramp_direction.get_or_insert_with(|| {
                let away = x_true.rows(0, d) - DVector::from_column_slice(divert_target);
                let n = away.norm();
                if n > T::EPS {
                    away / n
                } else {
                    let mut e = DVector::zeros(d);
                    e[0] = T::one();
                    e
                }
            });
            let magnitude = *rate * T::from_usize_lossy(k - spec.start_k);
            for q in 0..d {
                out[q] += dir[q] * magnitude;
            }
        }
        CompromiseKind::Stuck => {
            let frozen = memory.frozen.get_or_insert_with(|| y.rows(0, d).into_owned());
            out.rows_mut(0, d).copy_from(frozen);
        }
        CompromiseKind::NoiseInflation { noise_scale } => {
            let extra = *noise_scale - T::one();
            for q in 0..d {
                out[q] += position_noise[q] * extra;
            }
        }
    }
    Ok(out)
}
