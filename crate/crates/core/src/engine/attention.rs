//! The attention kernel, split so the same arithmetic can run either over a
//! whole row at once (the engine) or block by block (the protocol reduction).
//!
//! Scale bookkeeping, with `f` fractional bits: stored vectors are at
//! `2^-f`, projections `Qx`, `Kx`, `Vx` at `2^-2f`, scores at `2^-4f`.

use std::ops::Range;

use super::{AttentionHead, Mask};
use crate::numerics::{exp_scaled, quantize_ratio, Accumulator, Dyadic, FixedFormat, QuantCtx};
use crate::{Error, Result};

/// Projections of every position for one head.
pub struct Projections {
    pub q: Vec<Vec<i128>>,
    pub k: Vec<Vec<i128>>,
    pub v: Vec<Vec<i128>>,
}

/// Projects each position with that position's parameters.
pub fn project(head: &AttentionHead, x: &[Vec<i64>]) -> Result<Projections> {
    let mut q = Vec::with_capacity(x.len());
    let mut k = Vec::with_capacity(x.len());
    let mut v = Vec::with_capacity(x.len());
    for (pos, xv) in x.iter().enumerate() {
        let p = head.at(pos);
        q.push(p.q.mul_vec(xv)?);
        k.push(p.k.mul_vec(xv)?);
        v.push(p.v.mul_vec(xv)?);
    }
    Ok(Projections { q, k, v })
}

/// Projects one position only (used when a single row is needed).
pub fn project_key_value(head: &AttentionHead, pos: usize, x: &[i64]) -> Result<(Vec<i128>, Vec<i128>)> {
    let p = head.at(pos);
    Ok((p.k.mul_vec(x)?, p.v.mul_vec(x)?))
}

pub fn project_query(head: &AttentionHead, pos: usize, x: &[i64]) -> Result<Vec<i128>> {
    head.at(pos).q.mul_vec(x)
}

/// Exact score `q·k` at scale `2^-4f`.
pub fn score(q: &[i128], k: &[i128]) -> Result<i128> {
    q.iter().zip(k).try_fold(0i128, |acc, (&a, &b)| {
        if a == 0 || b == 0 {
            return Ok(acc);
        }
        a.checked_mul(b)
            .and_then(|p| acc.checked_add(p))
            .ok_or(Error::Overflow("attention score"))
    })
}

/// Positions that position `i` attends to.
pub fn row_range(mask: Mask, i: usize, n: usize) -> Range<usize> {
    match mask {
        Mask::Causal => 0..i + 1,
        Mask::Full => 0..n,
    }
}

/// The exact numerator and denominator of one attention row, possibly
/// restricted to a subset of positions.
#[derive(Clone, Debug)]
pub struct PartialSums {
    pub num: Vec<Accumulator>,
    pub den: Accumulator,
}

impl PartialSums {
    pub fn new(width: usize) -> Self {
        Self {
            num: vec![Accumulator::new(); width],
            den: Accumulator::new(),
        }
    }

    /// Adds the contribution of one key position.
    pub fn add(&mut self, q: &[i128], k: &[i128], v: &[i128], fmt: FixedFormat) -> Result<i128> {
        let s = score(q, k)?;
        let (mant, exp) = exp_scaled(s, 4 * fmt.frac_bits)?;
        let v_exp = exp - 2 * fmt.frac_bits as i64;
        for (acc, &vc) in self.num.iter_mut().zip(v) {
            acc.add_product(mant, v_exp, vc);
        }
        self.den.add_scaled(mant, exp);
        Ok(s)
    }

    pub fn merge(&mut self, other: &PartialSums) {
        for (a, b) in self.num.iter_mut().zip(&other.num) {
            a.merge(b);
        }
        self.den.merge(&other.den);
    }

    /// Exact sums as dyadics: `(Σ e·Vx, Σ e)`.
    pub fn totals(&self) -> (Vec<Dyadic>, Dyadic) {
        (self.num.iter().map(Accumulator::finish).collect(), self.den.finish())
    }

    /// Rounds `Σ e·Vx / Σ e` into the storage format.
    pub fn output(&self, fmt: FixedFormat, ctx: &mut QuantCtx) -> Vec<i64> {
        let (num, den) = self.totals();
        num.iter().map(|n| quantize_ratio(n, &den, fmt, ctx)).collect()
    }
}

/// Exponential weight of a score as an exact dyadic, for tracing.
pub fn weight_of(score: i128, fmt: FixedFormat) -> Result<Dyadic> {
    let (m, e) = exp_scaled(score, 4 * fmt.frac_bits)?;
    Ok(Dyadic::new(m.into(), e))
}
