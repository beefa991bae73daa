//! Scalar abstraction so the whole library works over `f32` or `f64`.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rustfft::FftNum;

/// Real scalar type usable for all numerics in this crate.
///
/// `f64` is the intended precision for every quoted tolerance; `f32` is
/// supported for quick exploratory runs.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + FftNum
    + NumAssign
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::LowerExp
    + serde::Serialize
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only on genuinely unrepresentable input.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    /// Complex unit with the given phase angle.
    fn cis(theta: Self) -> Complex<Self> {
        Complex::new(theta.cos(), theta.sin())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex number over the crate scalar.
pub type Cplx<F> = Complex<F>;
