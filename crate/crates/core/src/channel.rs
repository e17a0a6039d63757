//! Log-normal shadowing path-loss channel.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

pub type CommGraph = Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams<T> {
    /// Transmit power (dBm), identical for every agent.
    pub p_tx: T,
    /// Path loss at the reference distance (dB).
    pub pl_d0: T,
    /// Reference distance (m).
    pub d0: T,
    /// Path-loss exponent.
    pub beta: T,
    /// Shadowing variance (dB²).
    pub sigma2_shadow: T,
    /// Maximum communication range (m).
    pub delta_c: T,
}

impl<T: Scalar> ChannelParams<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.d0 > zero) {
            return Err(invalid("d0", "must be positive"));
        }
        if !(self.beta > zero) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(self.sigma2_shadow >= zero) {
            return Err(invalid("sigma2_shadow", "must be non-negative"));
        }
        if !(self.delta_c > zero) {
            return Err(invalid("delta_c", "must be positive"));
        }
        if !self.p_tx.is_finite() || !self.pl_d0.is_finite() {
            return Err(invalid("p_tx", "powers must be finite"));
        }
        Ok(())
    }

    /// Shadowing standard deviation (dB).
    pub fn sigma_shadow(&self) -> T {
        self.sigma2_shadow.sqrt()
    }
}

/// One received-power observation of `tx_id` by `rx_id` at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiSample<T> {
    pub rx_power: T,
    pub tx_id: usize,
    pub rx_id: usize,
    pub k: usize,
}

/// Received power (dBm) at distance `d` for a given shadowing realization (dB):
/// `P_tx − PL(d0) − 10 β log10(d / d0) + Λ`.
pub fn sample_rssi<T: Scalar>(d: T, params: &ChannelParams<T>, shadow_noise: T) -> Result<T> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::InvalidDistance(d.as_f64()));
    }
    Ok(params.p_tx - params.pl_d0 - T::lit(10.0) * params.beta * (d / params.d0).log10() + shadow_noise)
}

/// Communication graph on TRUE positions; the range test is inclusive.
pub fn build_comm_graph<T: Scalar>(true_positions: &[DVector<T>], delta_c: T) -> CommGraph {
    Graph::proximity(true_positions, delta_c)
}
