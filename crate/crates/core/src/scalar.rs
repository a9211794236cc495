//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the simulators, networks and optimizers are generic over.
///
/// Implemented for `f32` and `f64`. Random draws are always produced in `f64`
/// and narrowed with [`Real::lit`], so a given seed yields the same stream of
/// samples regardless of the scalar width.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name written into serialized headers.
    const NAME: &'static str;

    /// Converts an `f64` literal or sample into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Hidden-layer activation. Exact `tanh` unless overridden.
    #[inline]
    fn activation(self) -> Self {
        self.tanh()
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    /// Rational minimax approximation of `tanh`, accurate to about 3e-7
    /// absolute and branch-free so it vectorizes. Saturates beyond |x| ≈ 7.9.
    #[inline]
    fn activation(self) -> Self {
        let x = self.clamp(-7.905_311, 7.905_311);
        let x2 = x * x;
        let p = x
            * (4.893_524_6e-3
                + x2 * (6.372_619_3e-4
                    + x2 * (1.485_722_4e-5
                        + x2 * (5.122_297e-8 + x2 * (-8.604_672e-11 + x2 * (2.000_188e-13 + x2 * -2.760_768_5e-16))))));
        let q = 4.893_525e-3 + x2 * (2.268_434_6e-3 + x2 * (1.185_347e-4 + x2 * 1.198_258_4e-6));
        p / q
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// `0.5 * ln(2π)`, the per-dimension normalizer of a Gaussian log-density.
pub fn half_ln_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

pub fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite())
}
