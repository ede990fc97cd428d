//! Scale selection for retrieval heads.
//!
//! A retrieval head scores the matching key `s·D` and every other key at
//! most `s·(D-1)`, so with `n` positions each non-matching position gets
//! weight at most `e^-s` relative to the match. Reading a value of size at
//! most `V` through such a head, then amplifying by `a` (2 when the row is
//! split evenly between the position itself and its match, `m` when a
//! whole table is averaged), is off by at most
//!
//! `a · (2·n·e^-s·V + 2^-f)`
//!
//! which must stay below the rounding tolerance 1/4. The scale is
//! `s = c·ln²(n)`, starting from `c = 1` and doubling until the bound holds.
//! [`choose_exact_scale`] asks for more: the leaked mass must stay below a
//! quarter of the format's resolution so a retrieval returns the stored
//! value bit for bit. This check is done in `f64`; it only selects a constant and never
//! touches the evaluation path.

use serde::{Deserialize, Serialize};

use crate::numerics::{quantize_f64, FixedFormat, QuantCtx};
use crate::{Error, Result};

pub const TOLERANCE: f64 = 0.25;
const MAX_DOUBLINGS: u32 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Number of positions the head may see.
    pub positions: usize,
    /// Largest value carried through attention.
    #[serde(rename = "maxValue")]
    pub max_value: u64,
    pub amplification: u64,
    /// The multiplier `c` in `s = c·ln²(n)`.
    pub multiplier: f64,
    /// Stored scale as a raw mantissa.
    #[serde(rename = "scaleRaw")]
    pub scale_raw: i64,
    /// Stored scale value; also the guaranteed score gap between a match
    /// and any non-match.
    pub scale: f64,
    /// Upper bound on the read-out error before rounding.
    #[serde(rename = "errorBound")]
    pub error_bound: f64,
    pub tolerance: f64,
}

fn leak(positions: usize, max_value: u64, scale: f64) -> f64 {
    2.0 * positions.max(2) as f64 * (-scale).exp() * max_value as f64
}

/// Picks the retrieval scale for `positions` positions.
pub fn choose_scale(positions: usize, max_value: u64, amplification: u64, fmt: FixedFormat) -> Result<MarginReport> {
    let value_limit = 1u64 << fmt.int_bits.min(62);
    if max_value.saturating_mul(amplification.max(1)) >= value_limit {
        return Err(Error::InsufficientPrecision {
            reason: "carried values exceed the integer range of the format".into(),
            required: format!("{}", max_value.saturating_mul(amplification.max(1))),
            available: format!("{}", value_limit - 1),
        });
    }
    let resolution = (-(fmt.frac_bits as f64)).exp2();
    search(positions, max_value, amplification, TOLERANCE, fmt, |s| {
        amplification as f64 * (leak(positions, max_value, s) + resolution)
    })
}

/// Picks a scale at which one retrieval is exact after rounding: the
/// leaked mass stays below a quarter of the resolution, so the stored
/// result equals the retrieved stored value.
pub fn choose_exact_scale(positions: usize, max_value: u64, fmt: FixedFormat) -> Result<MarginReport> {
    let tolerance = (-(fmt.frac_bits as f64) - 2.0).exp2();
    search(positions, max_value, 1, tolerance, fmt, |s| leak(positions, max_value, s))
}

fn search(
    positions: usize,
    max_value: u64,
    amplification: u64,
    tolerance: f64,
    fmt: FixedFormat,
    bound: impl Fn(f64) -> f64,
) -> Result<MarginReport> {
    let ln = (positions.max(2) as f64).ln();
    let mut best = f64::INFINITY;
    for k in 0..MAX_DOUBLINGS {
        let c = (1u64 << k) as f64;
        let mut ctx = QuantCtx::default();
        let raw = quantize_f64(c * ln * ln, fmt, &mut ctx);
        if ctx.saturated {
            break;
        }
        let scale = raw as f64 / (1u64 << fmt.frac_bits) as f64;
        let b = bound(scale);
        best = best.min(b);
        if b < tolerance {
            return Ok(MarginReport {
                positions,
                max_value,
                amplification,
                multiplier: c,
                scale_raw: raw,
                scale,
                error_bound: b,
                tolerance,
            });
        }
    }
    Err(Error::InsufficientPrecision {
        reason: format!(
            "no retrieval scale representable in {} integer bits separates {positions} positions",
            fmt.int_bits
        ),
        required: format!("error bound < {tolerance:e}"),
        available: format!("best bound {best:.3e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_four_positions_with_unit_multiplier() {
        // e^(-ln²64) ≈ 3.0e-8, so 64 positions lose < 1e-5 of the mass.
        let s = 64f64.ln().powi(2);
        assert!(64.0 * (-s).exp() < 1e-5);
        let fmt = FixedFormat::new(15, 16).unwrap();
        let r = choose_scale(64, 1, 1, fmt).unwrap();
        assert_eq!(r.multiplier, 1.0);
        assert!(r.error_bound < TOLERANCE);
    }

    #[test]
    fn tiny_formats_are_refused() {
        let fmt = FixedFormat::new(2, 2).unwrap();
        assert!(matches!(
            choose_scale(1000, 3, 2, fmt),
            Err(Error::InsufficientPrecision { .. })
        ));
    }
}
