use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the exact numeric routines (f32 or f64).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an f64 constant.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `min{x, 1 - x}`, the Bayes error of guessing a Bernoulli(x) bit.
#[inline]
pub fn min_err<T: Scalar>(x: T) -> T {
    x.min(T::one() - x)
}

/// `ln(x / (1 - x))`, with the infinite endpoints kept.
#[inline]
pub fn logit<T: Scalar>(x: T) -> T {
    if x <= T::zero() {
        T::neg_infinity()
    } else if x >= T::one() {
        T::infinity()
    } else {
        x.ln() - (-x).ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn is_probability<T: Scalar>(x: T) -> bool {
    x >= T::zero() && x <= T::one()
}
