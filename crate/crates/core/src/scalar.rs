use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by every numeric kernel in the crate.
///
/// Implemented for `f32` and `f64`. Random draws are always made in `f64`
/// and narrowed with [`Real::lit`], so an `f32` simulation consumes the
/// same random stream as its `f64` twin.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    /// Round-trips through the 32-bit float wire representation.
    fn to_f32_bits(self) -> u32;
    fn from_f32_bits(bits: u32) -> Self;
}

impl Real for f32 {
    fn to_f32_bits(self) -> u32 {
        self.to_bits()
    }

    fn from_f32_bits(bits: u32) -> Self {
        f32::from_bits(bits)
    }
}

impl Real for f64 {
    fn to_f32_bits(self) -> u32 {
        (self as f32).to_bits()
    }

    fn from_f32_bits(bits: u32) -> Self {
        f32::from_bits(bits) as f64
    }
}
