//! Resilient multi-agent formation control.
//!
//! Agents fly a proximity-based spring-damper formation while each one
//! watches its own position sensor (chi-squared residual test with an
//! alarm-rate monitor) and the broadcast estimates of its neighbours. An agent
//! that finds its position sensor compromised switches to RSSI multilateration
//! against trusted neighbours and runs a Kalman filter that learns the
//! covariance of those fixes online.
//!
//! The estimation, localization and control math is generic over [`Scalar`]
//! (`f32`/`f64`); the closed-loop simulator in [`sim`] runs in `f64`.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a as f64, $b as f64, $tol as f64);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod channel;
pub mod control;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod localization;
pub mod model;
pub mod scalar;
pub mod sim;
pub mod special;
pub mod threat;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LtiModel64 = model::LtiModel<f64>;
pub type LtiModel32 = model::LtiModel<f32>;
pub type ControlParams64 = control::ControlParams<f64>;
pub type ChannelParams64 = channel::ChannelParams<f64>;
pub type KalmanState64 = estimation::KalmanState<f64>;
pub type KalmanState32 = estimation::KalmanState<f32>;
pub type AdaptiveCovState64 = estimation::AdaptiveCovState<f64>;
pub type DetectorState64 = detection::DetectorState<f64>;
pub type MultilaterationProblem64 = localization::MultilaterationProblem<f64>;
pub type MultilaterationProblem32 = localization::MultilaterationProblem<f32>;
