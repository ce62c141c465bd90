//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    /// `ln(1 + e^x)` without overflow.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::of(30.0) {
            self
        } else if self < Self::of(-30.0) {
            self.exp()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Inverse of [`Real::softplus`] for positive arguments.
    #[inline]
    fn softplus_inv(self) -> Self {
        if self > Self::of(30.0) {
            self
        } else {
            self.exp_m1().ln()
        }
    }

    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    #[inline]
    fn clamp_unit(self) -> Self {
        self.max(Self::zero()).min(Self::one())
    }
}

impl Real for f32 {}
impl Real for f64 {}
