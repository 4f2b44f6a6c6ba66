//! Scalar abstraction shared by the load-estimation and selection math.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};

/// Numeric type the balancer math is written against.
///
/// `f64` drives the simulator; exact rationals are used where a test must
/// compare two evaluation routes without rounding noise.
pub trait Scalar: Copy + PartialOrd + Num + FromPrimitive + Debug + 'static {}

impl<T> Scalar for T where T: Copy + PartialOrd + Num + FromPrimitive + Debug + 'static {}

/// Sum an iterator of scalars starting from zero.
pub fn sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}
