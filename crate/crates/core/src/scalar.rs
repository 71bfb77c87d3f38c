//! Floating-point abstraction the numerical core is generic over.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type for fields, rates and norms: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts a cluster-size index to a scalar.
    ///
    /// Exact for every index a desk-scale truncation can reach (< 2^24 even
    /// in single precision).
    #[inline]
    fn from_index(i: usize) -> Self {
        Self::from_usize(i).expect("cluster index representable as scalar")
    }

    /// Shorthand for lossy conversion of an `f64` constant.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable as scalar")
    }

    /// `i^k` with integer fast path for integral `k`.
    #[inline]
    fn index_pow(i: usize, k: Self) -> Self {
        let base = Self::from_index(i);
        if k == k.trunc() && k >= Self::zero() && k <= Self::of(64.0) {
            base.powi(k.to_i32().unwrap())
        } else {
            base.powf(k)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Scalar that the FFT backend accepts; satisfied by `f32` and `f64`.
pub trait FftScalar: Scalar + rustfft::FftNum {}
impl<T: Scalar + rustfft::FftNum> FftScalar for T {}
