//! Scalar abstraction shared by every matrix routine.
//!
//! Storage is generic; reductions (dot products, softmax sums, means) always
//! accumulate in `f64` and round back once at the end.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type usable in [`Matrix`](crate::Matrix).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Widen to the accumulation type.
    fn acc(self) -> f64;
    /// Round an accumulated value back to storage precision.
    fn from_acc(x: f64) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn acc(self) -> f64 {
                self as f64
            }
            #[inline]
            fn from_acc(x: f64) -> Self {
                x as $t
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
