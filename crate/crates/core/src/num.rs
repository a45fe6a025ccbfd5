//! Scalar abstraction for the model and metric math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the core math is generic over.
///
/// Everything numeric (forward/backward passes, the optimizer, the metric
/// formulas) is written against this trait so the same code runs at `f32`
/// or `f64`. The toolkit's concrete aliases pin `f64`.
pub trait Real:
    Float + NumAssignOps + Sum + Debug + Display + Serialize + DeserializeOwned + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand for lifting an `f64` constant into the generic scalar.
#[inline]
pub fn real<F: Real>(v: f64) -> F {
    F::from_f64(v)
}
