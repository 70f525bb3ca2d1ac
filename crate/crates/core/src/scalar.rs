use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point type the numeric core is written against.
///
/// Implemented for `f32` and `f64`. Randomness is always drawn in `f64` and
/// converted, so both widths consume identical random streams for a seed.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators so the loop vectorizes without fast-math
    let mut acc = [F::zero(); 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let (rem_a, rem_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in rem_a.iter().zip(rem_b) {
        sum += *x * *y;
    }
    sum
}

#[inline]
pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Cosine similarity with the convention that a zero vector has cosine 0
/// with everything.
#[inline]
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> F {
    let denom = norm(a) * norm(b);
    if denom <= F::zero() {
        return F::zero();
    }
    let c = dot(a, b) / denom;
    c.max(-F::one()).min(F::one())
}

/// Returns `a` scaled to unit length, or a copy of `a` if it is all zeros.
pub fn normalized<F: Scalar>(a: &[F]) -> Vec<F> {
    let n = norm(a);
    if n <= F::zero() {
        return a.to_vec();
    }
    a.iter().map(|&x| x / n).collect()
}

pub fn all_finite<F: Scalar>(xs: &[F]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
