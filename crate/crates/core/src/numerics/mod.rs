//! Fixed-point storage with an exact softmax stage.
//!
//! Embeddings are stored as signed fixed-point numbers with `p` bits
//! (`int_bits + frac_bits + 1` for the sign). Everything computed between two
//! storage points is exact: scores are integers at a known binary scale,
//! exponentials are dyadic rationals with a certified relative error, and
//! sums of dyadics are exact. Rounding happens once, in [`quantize`], with
//! round-half-to-even.

mod accum;
mod dyadic;
mod exp;
mod softmax;

pub use accum::Accumulator;
pub use dyadic::Dyadic;
pub use exp::{exp_dyadic, exp_rational, exp_scaled, EXP_RELATIVE_ERROR_BITS};
pub use softmax::softmax_row;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest supported storage width. Raw values live in `i64` and score
/// products in `i128`.
pub const MAX_PRECISION: u32 = 40;

/// Largest supported fractional width; keeps the exponential's error bound
/// far below `2^-(frac_bits + 8)`.
pub const MAX_FRAC_BITS: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedFormat {
    #[serde(rename = "intBits")]
    pub int_bits: u32,
    #[serde(rename = "fracBits")]
    pub frac_bits: u32,
}

impl FixedFormat {
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self> {
        let f = Self { int_bits, frac_bits };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.int_bits as u64 + self.frac_bits as u64 + 1;
        if p < 2 {
            return Err(Error::InvalidParams("precision must be at least 2 bits".into()));
        }
        if p > MAX_PRECISION as u64 {
            return Err(Error::Unsupported(format!(
                "precision {p} exceeds the supported maximum of {MAX_PRECISION}"
            )));
        }
        if self.frac_bits > MAX_FRAC_BITS {
            return Err(Error::Unsupported(format!(
                "fractional bits {} exceed the supported maximum of {MAX_FRAC_BITS}",
                self.frac_bits
            )));
        }
        Ok(())
    }

    /// Total width `p`, sign bit included.
    pub fn p(&self) -> u32 {
        self.int_bits + self.frac_bits + 1
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.p() - 1)) - 1
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.p() - 1))
    }

    /// Value of one unit in the last place, `2^-frac_bits`.
    pub fn resolution(&self) -> BigRational {
        BigRational::new(BigInt::from(1), BigInt::from(1) << self.frac_bits)
    }

    /// The raw encoding of an integer, if representable.
    pub fn raw_of_int(&self, v: i64) -> Result<i64> {
        let raw = (v as i128) << self.frac_bits;
        if raw > self.max_raw() as i128 || raw < self.min_raw() as i128 {
            return Err(Error::Range {
                what: "integer in fixed-point format",
                value: v as i128,
                lo: (self.min_raw() >> self.frac_bits) as i128,
                hi: (self.max_raw() >> self.frac_bits) as i128,
            });
        }
        Ok(raw as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedScalar {
    pub raw: i64,
    pub format: FixedFormat,
}

impl FixedScalar {
    pub fn to_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.raw), BigInt::from(1) << self.format.frac_bits)
    }

    pub fn to_f64(&self) -> f64 {
        self.raw as f64 / (1u64 << self.format.frac_bits) as f64
    }
}

/// Per-computation rounding context. The saturation flag is sticky.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuantCtx {
    pub saturated: bool,
    pub saturations: u64,
}

impl QuantCtx {
    fn clamp(&mut self, v: BigInt, fmt: FixedFormat) -> i64 {
        let max = fmt.max_raw();
        let min = fmt.min_raw();
        match v.to_i64() {
            Some(r) if (min..=max).contains(&r) => r,
            _ => {
                self.saturated = true;
                self.saturations += 1;
                if v.is_negative() {
                    min
                } else {
                    max
                }
            }
        }
    }
}

/// `num / den` rounded to the nearest integer, ties to even. `den` ≠ 0.
pub fn round_half_even(num: &BigInt, den: &BigInt) -> BigInt {
    let (num, den) = if den.is_negative() {
        (-num, -den)
    } else {
        (num.clone(), den.clone())
    };
    let (q, r) = num.div_mod_floor(&den);
    let twice: BigInt = r << 1;
    match twice.cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q.is_even() {
                q
            } else {
                q + 1
            }
        }
    }
}

/// Rounds an exact rational into `fmt`, saturating at the bounds.
pub fn quantize(x: &BigRational, fmt: FixedFormat, ctx: &mut QuantCtx) -> FixedScalar {
    let scaled = x.numer() << fmt.frac_bits;
    let raw = ctx.clamp(round_half_even(&scaled, x.denom()), fmt);
    FixedScalar { raw, format: fmt }
}

/// Rounds `num / den` (both dyadic) into `fmt`. `den` must be nonzero.
pub fn quantize_ratio(num: &Dyadic, den: &Dyadic, fmt: FixedFormat, ctx: &mut QuantCtx) -> i64 {
    let (n, d) = num.ratio_parts(den, fmt.frac_bits as i64);
    ctx.clamp(round_half_even(&n, &d), fmt)
}

/// Rounds an integer given at scale `2^-scale_bits` into `fmt`.
pub fn quantize_scaled(v: i128, scale_bits: u32, fmt: FixedFormat, ctx: &mut QuantCtx) -> i64 {
    let v = BigInt::from(v);
    let r = if scale_bits >= fmt.frac_bits {
        round_half_even(&v, &(BigInt::from(1) << (scale_bits - fmt.frac_bits)))
    } else {
        v << (fmt.frac_bits - scale_bits)
    };
    ctx.clamp(r, fmt)
}

/// Rounds an `f64` into `fmt` (used only for builder constants such as
/// retrieval scales, never on the evaluation path).
pub fn quantize_f64(x: f64, fmt: FixedFormat, ctx: &mut QuantCtx) -> i64 {
    let scaled = x * (1u64 << fmt.frac_bits) as f64;
    let r = scaled.round_ties_even();
    if !r.is_finite() || r.abs() > 9.0e18 {
        ctx.saturated = true;
        ctx.saturations += 1;
        return if r.is_sign_negative() { fmt.min_raw() } else { fmt.max_raw() };
    }
    ctx.clamp(BigInt::from(r as i64), fmt)
}

impl Zero for Dyadic {
    fn zero() -> Self {
        Dyadic::from_int(0)
    }

    fn is_zero(&self) -> bool {
        self.mantissa().is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn quantize_examples() {
        let fmt = FixedFormat::new(3, 2).unwrap();
        let mut ctx = QuantCtx::default();
        assert_eq!(quantize(&rat(0, 1), fmt, &mut ctx).raw, 0);
        // 3/8 · 4 = 1.5, tie to even → 2, i.e. 0.50.
        assert_eq!(quantize(&rat(3, 8), fmt, &mut ctx).raw, 2);
        // 1/8 · 4 = 0.5, tie to even → 0.
        assert_eq!(quantize(&rat(1, 8), fmt, &mut ctx).raw, 0);
        assert_eq!(quantize(&rat(-3, 8), fmt, &mut ctx).raw, -2);
        assert!(!ctx.saturated);
        let top = quantize(&rat(8, 1), fmt, &mut ctx);
        assert_eq!(top.raw, fmt.max_raw());
        assert!(ctx.saturated);
    }

    #[test]
    fn format_bounds() {
        assert!(FixedFormat::new(0, 0).is_err());
        let f = FixedFormat::new(0, 1).unwrap();
        assert_eq!(f.p(), 2);
        assert_eq!((f.min_raw(), f.max_raw()), (-2, 1));
        assert!(FixedFormat::new(30, 20).is_err());
    }

    #[test]
    fn scaled_rounding() {
        let fmt = FixedFormat::new(8, 4).unwrap();
        let mut ctx = QuantCtx::default();
        // 40 / 2^6 = 0.625 → ·16 = 10 exactly.
        assert_eq!(quantize_scaled(40, 6, fmt, &mut ctx), 10);
        // 2 / 2^6 → ·16 = 0.5, tie to even → 0.
        assert_eq!(quantize_scaled(2, 6, fmt, &mut ctx), 0);
        assert_eq!(quantize_scaled(3, 2, fmt, &mut ctx), 12);
    }
}
