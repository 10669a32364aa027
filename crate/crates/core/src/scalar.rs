//! Scalar abstraction shared by every numerical kernel in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A point of phase space `(x, v)`, position first.
pub type Phase<T> = [T; 6];

/// Splits a phase point into position and velocity.
#[inline]
pub fn split<T: Real>(z: &Phase<T>) -> ([T; 3], [T; 3]) {
    ([z[0], z[1], z[2]], [z[3], z[4], z[5]])
}

#[inline]
pub fn join<T: Real>(x: [T; 3], v: [T; 3]) -> Phase<T> {
    [x[0], x[1], x[2], v[0], v[1], v[2]]
}

#[inline]
pub fn dot<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
pub fn norm<T: Real, const N: usize>(a: &[T; N]) -> T {
    dot(a, a).sqrt()
}

/// Applies the symplectic matrix `J = [[0, I], [-I, 0]]` to a phase vector.
#[inline]
pub fn apply_j<T: Real>(g: &Phase<T>) -> Phase<T> {
    [g[3], g[4], g[5], -g[0], -g[1], -g[2]]
}
