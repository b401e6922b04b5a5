//! Scalar abstractions.
//!
//! Everything numeric in this crate is generic over the real floating-point
//! type through [`Real`]; complex-valued basis families (trigonometric,
//! spherical) use `Complex<R>` values on top of the same real scalar.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Real scalar the crate is generic over. In practice `f32` or `f64`; the
/// blanket impl picks up anything float-like from `num-traits`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum<Self>
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant, panicking only for genuinely unrepresentable
    /// values (never the literals used internally).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + NumAssign
        + Sum<T>
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Complex value over the crate's real scalar.
pub type C<R> = Complex<R>;

/// Scalar usable with the dense linear-algebra helpers (adds the `nalgebra`
/// field requirements on top of [`Real`]).
pub trait DenseReal: Real + nalgebra::RealField {}
impl<T> DenseReal for T where T: Real + nalgebra::RealField {}

/// `max` that stays unambiguous when both `Float` and `nalgebra::RealField`
/// are in scope (both traits define one).
pub fn fmax<R: Real>(a: R, b: R) -> R {
    if b > a {
        b
    } else {
        a
    }
}

/// See [`fmax`]; same disambiguation for `sqrt`.
pub fn fsqrt<R: Real>(a: R) -> R {
    num_traits::Float::sqrt(a)
}

/// See [`fmax`]; same disambiguation for `abs`.
pub fn fabs<R: Real>(a: R) -> R {
    if a < R::zero() {
        -a
    } else {
        a
    }
}

/// See [`fmax`].
pub fn fmin<R: Real>(a: R, b: R) -> R {
    if b < a {
        b
    } else {
        a
    }
}

/// `|delta|` measured against `1 + |reference|`; the crate-wide notion of
/// relative error for quantities that may legitimately be zero.
pub fn rel_to<R: Real>(delta: R, reference: R) -> R {
    delta.abs() / (R::one() + reference.abs())
}

/// Relative magnitude of the complex difference `a - b`.
pub fn rel_diff_c<R: Real>(a: C<R>, b: C<R>) -> R {
    (a - b).norm() / (R::one() + b.norm())
}
