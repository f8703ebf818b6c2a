//! Scalar abstraction: the whole engine is generic over f32/f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar usable everywhere in the engine.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    const NAME: &'static str;

    /// Lossless-enough conversion from an f64 constant.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("constant conversion")
    }

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn as_f64(self) -> f64 {
        self
    }
}
