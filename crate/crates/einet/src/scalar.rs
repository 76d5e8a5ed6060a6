//! Scalar element types accepted by [`Tensor`](crate::Tensor).
//!
//! The whole pipeline is generic over [`Scalar`]; the shipped detector runs
//! on `f32` while test oracles and gradient checks may instantiate `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
    /// Numerically stable logistic function.
    fn stable_sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

macro_rules! scalar_impl {
    ($($t:ty)*) => ($(
        impl Scalar for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    )*)
}

scalar_impl!(f32 f64);
