//! Certified exponential on dyadic and rational arguments.
//!
//! Method: convert the argument to a fixed-point integer with
//! [`WORK_BITS`] fractional bits, reduce `x = k·ln2 + r` with `|r| ≤ ln2/2`
//! using a 320-bit value of `ln 2`, sum the Taylor series of `e^r` until the
//! terms vanish, and return `2^k · e^r` rounded to a 64-bit mantissa.
//!
//! Error budget (relative): argument truncation `2^-192`, range reduction
//! `|k|·2^-320 ≤ 2^-279`, Taylor truncation and per-term rounding at most
//! `64·2^-192`, final rounding `2^-64`. The total is below
//! `2^-EXP_RELATIVE_ERROR_BITS`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::{round_half_even, Dyadic};
use crate::{Error, Result};

/// Every value returned here is within relative error `2^-62` of the true
/// exponential.
pub const EXP_RELATIVE_ERROR_BITS: u32 = 62;

const WORK_BITS: u64 = 192;
const LN2_BITS: u64 = 320;
const MANTISSA_BITS: u64 = 64;
/// Arguments are limited to `|x| < 2^MAX_ARG_LOG2`.
const MAX_ARG_LOG2: u64 = 40;
const CACHE_LIMIT: usize = 1 << 16;

fn ln2() -> &'static BigInt {
    static LN2: OnceLock<BigInt> = OnceLock::new();
    LN2.get_or_init(|| {
        // ln 2 = Σ_{k≥1} 1/(k·2^k); each truncated term errs by < 1 ulp.
        let guard = 16;
        let one = BigInt::from(1) << (LN2_BITS + guard);
        let mut sum = BigInt::zero();
        for k in 1..=(LN2_BITS + guard + 8) {
            sum += (&one >> k) / BigInt::from(k);
        }
        sum >> guard
    })
}

thread_local! {
    static CACHE: RefCell<HashMap<Dyadic, Dyadic>> = RefCell::new(HashMap::new());
    static SCALED_CACHE: RefCell<HashMap<(i128, u32), (u64, i64)>> = RefCell::new(HashMap::new());
}

/// `e^(raw · 2^-scale_bits)` as `(mantissa, exponent)` with a mantissa below
/// `2^64`. This is the hot path of attention, so results are memoised per
/// thread.
pub fn exp_scaled(raw: i128, scale_bits: u32) -> Result<(u64, i64)> {
    if let Some(hit) = SCALED_CACHE.with(|c| c.borrow().get(&(raw, scale_bits)).copied()) {
        return Ok(hit);
    }
    let d = exp_uncached(&Dyadic::from_scaled(raw, scale_bits))?;
    let mant = u64::try_from(d.mantissa()).expect("exponential mantissa fits in 64 bits");
    let out = (mant, d.exponent());
    SCALED_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        c.insert((raw, scale_bits), out);
    });
    Ok(out)
}

/// `e^x` for an exact dyadic `x`.
pub fn exp_dyadic(x: &Dyadic) -> Result<Dyadic> {
    if let Some(hit) = CACHE.with(|c| c.borrow().get(x).cloned()) {
        return Ok(hit);
    }
    let out = exp_uncached(x)?;
    CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        c.insert(x.clone(), out.clone());
    });
    Ok(out)
}

fn exp_uncached(x: &Dyadic) -> Result<Dyadic> {
    let mag_bits = x.mantissa().bits() as i64 + x.exponent();
    if mag_bits > MAX_ARG_LOG2 as i64 {
        return Err(Error::Overflow("exponential argument"));
    }
    let shift = x.exponent() + WORK_BITS as i64;
    let fixed = if shift >= 0 {
        x.mantissa() << shift as u64
    } else {
        floor_shift(x.mantissa(), (-shift) as u64)
    };
    Ok(exp_fixed(&fixed))
}

/// `e^x` for an exact rational `x`.
pub fn exp_rational(x: &BigRational) -> Result<Dyadic> {
    let int_part = x.numer() / x.denom();
    if int_part.bits() > MAX_ARG_LOG2 {
        return Err(Error::Overflow("exponential argument"));
    }
    let scaled = x.numer() << WORK_BITS;
    let fixed = floor_div(&scaled, x.denom());
    Ok(exp_fixed(&fixed))
}

fn floor_shift(v: &BigInt, s: u64) -> BigInt {
    // `>>` on negative BigInt rounds toward negative infinity already.
    v >> s
}

fn floor_div(a: &BigInt, b: &BigInt) -> BigInt {
    use num_integer::Integer;
    a.div_floor(b)
}

/// `e^(s · 2^-WORK_BITS)`.
fn exp_fixed(s: &BigInt) -> Dyadic {
    let extra = LN2_BITS - WORK_BITS;
    let s_wide = s << extra;
    let k = round_half_even(&s_wide, ln2());
    let r_wide = &s_wide - &k * ln2();
    let r = floor_shift(&r_wide, extra);

    let one = BigInt::from(1) << WORK_BITS;
    let mut term = one.clone();
    let mut sum = one;
    let mut j = 1u32;
    while !term.is_zero() {
        term = (&term * &r) >> WORK_BITS;
        term /= BigInt::from(j);
        sum += &term;
        j += 1;
    }

    let bits = sum.bits();
    let drop = bits.saturating_sub(MANTISSA_BITS);
    let mant = if drop > 0 {
        round_half_even(&sum, &(BigInt::from(1) << drop))
    } else {
        sum
    };
    let k = i64::try_from(&k).expect("reduced exponent fits in i64");
    debug_assert!(!mant.is_negative());
    Dyadic::new(mant, k - WORK_BITS as i64 + drop as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    /// Plain Taylor series in exact rationals, no range reduction.
    fn taylor_oracle(x: &BigRational, terms: u32) -> BigRational {
        let mut term = BigRational::one();
        let mut sum = BigRational::one();
        for j in 1..terms {
            term = term * x / BigRational::from_integer(BigInt::from(j));
            sum += &term;
        }
        sum
    }

    fn rel_err(approx: &Dyadic, exact: &BigRational) -> f64 {
        let diff = (approx.to_rational() - exact).abs() / exact;
        let (n, d) = (diff.numer().clone(), diff.denom().clone());
        let shift = d.bits().saturating_sub(60);
        let n = (n >> shift).to_string().parse::<f64>().unwrap();
        let d = (d >> shift).to_string().parse::<f64>().unwrap();
        n / d
    }

    #[test]
    fn ln2_digits() {
        let approx = ln2() >> (LN2_BITS - 60);
        let expect = (std::f64::consts::LN_2 * (1u64 << 60) as f64) as i128;
        let got: i128 = (&approx).try_into().unwrap();
        assert!((got - expect).abs() < 1024);
    }

    #[test]
    fn matches_exact_taylor_on_small_arguments() {
        for (n, d) in [(0, 1), (1, 1), (-1, 1), (3, 2), (-7, 4), (1, 1024), (2, 1)] {
            let x = BigRational::new(BigInt::from(n), BigInt::from(d));
            let exact = taylor_oracle(&x, 90);
            let got = exp_rational(&x).unwrap();
            assert!(rel_err(&got, &exact) < 2f64.powi(-(EXP_RELATIVE_ERROR_BITS as i32)));
        }
    }

    #[test]
    fn dyadic_and_rational_paths_agree() {
        for raw in [-4000i128, -17, 0, 5, 999] {
            let d = Dyadic::from_scaled(raw, 6);
            assert_eq!(exp_dyadic(&d).unwrap(), exp_rational(&d.to_rational()).unwrap());
        }
    }

    #[test]
    fn scaled_path_agrees() {
        let (m, e) = exp_scaled(-77, 5).unwrap();
        let d = exp_dyadic(&Dyadic::from_scaled(-77, 5)).unwrap();
        assert_eq!(Dyadic::new(BigInt::from(m), e), d);
    }

    #[test]
    fn exp_zero_is_one() {
        assert_eq!(exp_dyadic(&Dyadic::from_int(0)).unwrap(), Dyadic::from_int(1));
    }

    #[test]
    fn reciprocal_pairs() {
        let x = Dyadic::from_int(20);
        let y = Dyadic::from_int(-20);
        let prod = &exp_dyadic(&x).unwrap() * &exp_dyadic(&y).unwrap();
        assert!(rel_err(&prod, &BigRational::one()) < 2f64.powi(-60));
    }

    #[test]
    fn huge_arguments_are_refused() {
        let x = Dyadic::new(BigInt::from(1), 50);
        assert!(matches!(exp_dyadic(&x), Err(Error::Overflow(_))));
    }
}
