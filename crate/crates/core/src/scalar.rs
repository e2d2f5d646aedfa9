//! Scalar abstraction shared by the math layer.
//!
//! Everything under `numerics`, `opinion`, `dst` and `edl` is generic over
//! [`Real`]; the model, trainer and file formats are pinned to `f64`.

use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display};

/// floating point: f32 or f64
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Lossless-enough conversion of a literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
