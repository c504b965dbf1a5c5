//! Real scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real number type the engine computes in: `f32` or `f64`.
///
/// The two associated tolerances absorb floating-point drift at the exact
/// lattice boundaries that lossless conversion depends on. They are sized to
/// the precision of the type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// A scaled activation within this distance of an integer is snapped to
    /// that integer before flooring.
    const LATTICE_SNAP: f64;

    /// Relative slack on the firing comparison: a potential fires when it
    /// reaches `threshold * (1 - FIRE_SLACK)`.
    const FIRE_SLACK: f64;

    /// Converts an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for the finite constants used in this crate.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const LATTICE_SNAP: f64 = 1e-12;
    const FIRE_SLACK: f64 = 1e-9;
}

impl Scalar for f32 {
    const LATTICE_SNAP: f64 = 1e-5;
    const FIRE_SLACK: f64 = 1e-4;
}

/// True for values strictly above zero; false for NaN.
pub(crate) fn positive<S: Scalar>(v: S) -> bool {
    v > S::zero()
}

/// Floors `v`, treating values within [`Scalar::LATTICE_SNAP`] of an integer
/// as that integer.
pub fn snapped_floor<S: Scalar>(v: S) -> S {
    let nearest = v.round();
    if (v - nearest).abs() <= S::lit(S::LATTICE_SNAP) {
        nearest
    } else {
        v.floor()
    }
}

/// `2^exp` as a scalar. Exact for every exponent used by tdIF coefficients.
pub fn pow2<S: Scalar>(exp: usize) -> S {
    S::lit(2.0).powi(exp as i32)
}
