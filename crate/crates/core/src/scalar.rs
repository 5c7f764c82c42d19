//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by the estimator: `f32` or `f64`.
///
/// Besides the usual `num-traits` float surface this adds the complementary
/// error function (not part of `Float`) and a couple of precision-aware
/// constants used to pick stopping tolerances.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Complementary error function `erfc(x) = 1 - erf(x)`.
    fn erfc(self) -> Self;

    /// Converts an `f64` literal. Every literal used in the crate is
    /// representable (possibly rounded) in both `f32` and `f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable")
    }

    /// Converts a count or index.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    /// Lossy conversion to `f64`, used for formatting and I/O.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest relative tolerance worth asking for at this precision:
    /// `max(floor, 8 ε)`.
    #[inline]
    fn tolerance(floor: f64) -> Self {
        Self::lit(floor).max(Self::epsilon() * Self::lit(8.0))
    }
}

impl Scalar for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}
