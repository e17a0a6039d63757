//! Scalar abstraction shared by every numeric module.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating point type the estimation and control math is generic over.
///
/// Implemented for `f32` and `f64`. Constants are written as `f64` literals and
/// converted with [`Scalar::lit`].
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Machine epsilon.
    const EPS: Self;

    /// Converts an `f64` constant. Every finite `f64` maps to some value of
    /// the supported types, so this never fails for them.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize must be representable")
    }

    /// Iterative-method tolerance: the requested tolerance, or a few ulps when
    /// the type cannot resolve it.
    #[inline]
    fn tol(requested: f64) -> Self {
        let floor = Self::EPS * Self::lit(8.0);
        let req = Self::lit(requested);
        if req > floor {
            req
        } else {
            floor
        }
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
}
