//! Floating-point scalar abstraction: every numeric kernel in this crate is
//! generic over [`Scalar`], instantiated as `f32` for speed or `f64` for
//! oracle-grade precision (gradient checks run in double).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn real(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("finite f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    fn from_count(value: usize) -> Self {
        <Self as FromPrimitive>::from_usize(value).expect("usize converts to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
