//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
///
/// Everything is written against this trait.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

/// Complementary error function, evaluated in `f64` (msun algorithm,
/// sub-ulp accurate through the deep tail) and cast back.
pub fn erfc<T: Real>(x: T) -> T {
    T::of(libm::erfc(x.as_f64()))
}

#[inline]
pub fn cis<T: Real>(theta: T) -> C<T> {
    C::new(theta.cos(), theta.sin())
}

#[inline]
pub fn czero<T: Real>() -> C<T> {
    C::new(T::zero(), T::zero())
}

#[inline]
pub fn cone<T: Real>() -> C<T> {
    C::new(T::one(), T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with mpmath at 50 digits.
    #[allow(clippy::excessive_precision)]
    const ERFC_REF: [(f64, f64); 8] = [
        (0.0, 1.0),
        (0.5, 0.479_500_122_186_953_46),
        (1.0, 0.157_299_207_050_285_13),
        (2.0, 0.004_677_734_981_047_265_8),
        (3.5, 7.430_983_723_414_127_5e-7),
        (5.0, 1.537_459_794_428_034_9e-12),
        (7.5, 2.776_649_386_030_569_1e-26),
        (10.0, 2.088_487_583_762_544_8e-45),
    ];

    #[test]
    fn erfc_matches_high_precision_reference() {
        for (x, want) in ERFC_REF {
            let got = erfc(x);
            let rel = ((got - want) / want).abs();
            assert!(
                rel < 1e-12,
                "erfc({x}) = {got:e}, want {want:e}, rel {rel:e}"
            );
        }
    }

    #[test]
    fn erfc_f32_tracks_f64() {
        for (x, want) in ERFC_REF.iter().take(6) {
            let got = erfc(*x as f32) as f64;
            assert!(((got - want) / want).abs() < 1e-5);
        }
    }
}
