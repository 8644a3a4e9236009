use nalgebra as na;
use num_traits as nt;

/// Real scalar the numerical core is generic over. Tolerances in the test
/// suite assume `f64`; `f32` compiles and runs but is not tuned for.
pub trait Float:
    Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive + na::RealField + na::Scalar
{
}

impl Float for f32 {}
impl Float for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Float>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable")
}

#[inline]
pub fn to_f64<T: Float>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// Largest-magnitude value in `xs`, zero for an empty slice.
pub fn max_abs<T: Float>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter()
        .fold(T::zero(), |m, x| na::RealField::max(m, na::ComplexField::abs(x)))
}
