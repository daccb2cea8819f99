//! Internal numeric helpers shared across modules.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

/// `2^e` as an `f64`, exact over the full finite exponent range and
/// saturating to `0.0` / `INFINITY` outside it.
pub(crate) fn pow2(e: i64) -> f64 {
    if e >= 1024 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        // subnormal range: assemble from the smallest positive f64
        f64::from_bits(1) * pow2(e + 1074)
    } else {
        0.0
    }
}

/// `int * 2^log2_scale` as an `f64`, correct for integers far outside the
/// `f64` exponent range (only the top 63 bits of `int` enter the mantissa;
/// relative error is a few ulp plus the error of `log2_scale` itself).
pub(crate) fn scaled_int_to_f64(int: &BigInt, log2_scale: f64) -> f64 {
    if int.is_zero() {
        return 0.0;
    }
    let sign = if int.is_negative() { -1.0 } else { 1.0 };
    let mag = int.abs();
    let bits = mag.bits() as i64;
    let (mant, shift) = if bits > 63 {
        ((mag >> (bits - 63)).to_u64().expect("63-bit magnitude"), bits - 63)
    } else {
        (mag.to_u64().expect("63-bit magnitude"), 0)
    };
    let total = shift as f64 + log2_scale;
    let whole = total.floor();
    let frac = total - whole;
    sign * mant as f64 * pow2(whole as i64) * frac.exp2()
}

/// `(num / den) * 2^log2_scale` as an `f64` for positive `den`, robust to
/// operands far outside the `f64` range.
pub(crate) fn scaled_ratio_to_f64(num: &BigInt, den: &BigInt, log2_scale: f64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    debug_assert!(den.is_positive(), "denominator must be positive");
    let sign = if num.is_negative() { -1.0 } else { 1.0 };
    let nb = num.bits() as i64;
    let db = den.bits() as i64;
    let shift = db - nb + 63;
    let q = if shift >= 0 {
        (num.abs() << shift) / den
    } else {
        num.abs() / (den << (-shift))
    };
    sign * scaled_int_to_f64(&q, log2_scale - shift as f64)
}

/// `log2 |x|` of a nonzero big integer, accurate to ~1e-15 relative.
pub(crate) fn log2_big(x: &BigInt) -> f64 {
    debug_assert!(!x.is_zero(), "log2 of zero");
    let mag = x.abs();
    let bits = mag.bits();
    if bits <= 63 {
        (mag.to_u64().expect("63-bit magnitude") as f64).log2()
    } else {
        let top = (mag >> (bits - 63)).to_u64().expect("63-bit magnitude");
        (bits - 63) as f64 + (top as f64).log2()
    }
}

/// Exact-rational to `f64`, robust when numerator or denominator exceed
/// the `f64` range (unlike the naive `numer/denom` conversion).
pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let n = r.numer();
    let d = r.denom();
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    let nb = n.bits() as i64;
    let db = d.bits() as i64;
    // quotient scaled so the integer division carries ~63 significant bits
    let shift = db - nb + 63;
    let q = if shift >= 0 {
        (n.abs() << shift) / d.abs()
    } else {
        n.abs() / (d.abs() << (-shift))
    };
    sign * scaled_int_to_f64(&q, -(shift as f64))
}
