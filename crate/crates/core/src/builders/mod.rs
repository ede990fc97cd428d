//! Hand-built weights for three solvers of the composition task:
//!
//! - [`depth`]: a causal decoder with `L + 1` layers and one head that
//!   follows the chain one hop per layer.
//! - [`cot`]: a one-layer causal decoder that emits one chain element per
//!   generated token.
//! - [`encoder`]: a full-mask encoder that resolves the chain by pointer
//!   doubling in `O(log L)` layers.
//!
//! All three rely on one primitive, the retrieval head built by
//! [`retrieval_head`]: a query carries a binary target key and attention
//! concentrates on the position whose key matches it.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::engine::{AttentionHead, HeadParams};
use crate::numerics::FixedFormat;
use crate::task::{TaskParams, Token};
use crate::{Error, Result};

pub mod cot;
pub mod depth;
pub mod encoder;
pub mod keys;
pub mod margin;

pub use cot::{build_cot_solver, CotSolver};
pub use depth::{build_depth_solver, DepthSolver};
pub use encoder::{build_encoder_solver, EncoderSolver};
pub use keys::KeyEncoding;
pub use margin::{choose_exact_scale, choose_scale, MarginReport};

/// Storage format used when the caller does not ask for one.
pub const DEFAULT_FORMAT: FixedFormat = FixedFormat {
    int_bits: 15,
    frac_bits: 16,
};

/// Shape summary of a built solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub layers: usize,
    pub heads: usize,
    #[serde(rename = "headDim")]
    pub head_dim: usize,
    pub width: usize,
    #[serde(rename = "keyBits")]
    pub key_bits: usize,
    /// Generated tokens, for chain-of-thought solvers.
    #[serde(rename = "cotSteps", default, skip_serializing_if = "Option::is_none")]
    pub cot_steps: Option<usize>,
    pub margin: MarginReport,
}

/// Where a retrieval head reads its keys and targets.
#[derive(Clone, Debug)]
pub struct RetrievalSlots {
    /// Slot holding the constant 1.
    pub one: usize,
    /// First slot of the position's own key.
    pub key: usize,
    /// First slot of the target key carried by the query.
    pub target: usize,
    /// Which key bits take part in the match.
    pub bits: Range<usize>,
    /// `(source slot, destination row)` pairs copied by the value map.
    pub values: Vec<(usize, usize)>,
}

/// Builds a head whose score is `scale · (number of matching key bits)`.
///
/// Keys expand bit `a` into the pair `(a, 1 - a)` and queries expand the
/// target bit `t` into `(scale·t, scale·(1 - t))`, so a full match scores
/// `scale·|bits|` and every mismatch costs exactly `scale`.
pub fn retrieval_head(slots: &RetrievalSlots, scale_raw: i64, d: usize, width: usize, fmt: FixedFormat) -> Result<AttentionHead> {
    let nbits = slots.bits.len();
    if 2 * nbits > d {
        return Err(Error::InvalidParams(format!(
            "{nbits} key bits need head dimension {}, have {d}",
            2 * nbits
        )));
    }
    let one = 1i64 << fmt.frac_bits;
    let mut p = HeadParams::zeros(d, width);
    for (row, b) in slots.bits.clone().enumerate() {
        p.q.set(2 * row, slots.target + b, scale_raw);
        p.q.set(2 * row + 1, slots.one, scale_raw);
        p.q.set(2 * row + 1, slots.target + b, -scale_raw);
        p.k.set(2 * row, slots.key + b, one);
        p.k.set(2 * row + 1, slots.one, one);
        p.k.set(2 * row + 1, slots.key + b, -one);
    }
    for &(src, dst) in &slots.values {
        if dst >= d || src >= width {
            return Err(Error::InvalidParams(format!("value map {src} -> {dst} out of range")));
        }
        p.v.set(dst, src, one);
    }
    Ok(AttentionHead::new(p))
}

/// Identity map over the first `n` slots.
pub(crate) fn copy_slots(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|s| (s, s)).collect()
}

/// Rejects tokens that are not part of the task vocabulary.
pub(crate) fn check_task_token(params: &TaskParams, t: &Token, position: usize) -> Result<()> {
    let bad = |reason: String| Err(Error::Vocabulary { position, reason });
    match t.block {
        -1 => {
            if t.index != 1 {
                return bad(format!("query token index {} is not 1", t.index));
            }
            let q = params.query_count();
            let ok = if params.l == 1 { t.value == 0 } else { (1..=q).contains(&t.value) };
            if !ok {
                return bad(format!("packed query {} out of range", t.value));
            }
        }
        0 => {
            if t.index != 1 || t.value == 0 || t.value > params.m {
                return bad(format!("start token ({}, {}) out of range", t.index, t.value));
            }
        }
        b if b >= 1 && (b as usize) <= params.l => {
            let size = params.domain(b as usize - 1);
            if t.index == 0 || t.index > size || t.value == 0 || t.value > size {
                return bad(format!("table token ({}, {}) outside [1, {size}] in block {b}", t.index, t.value));
            }
        }
        b => return bad(format!("block {b} is not part of the task")),
    }
    Ok(())
}

/// Writes `bits` (0/1) into `x[start..]` as stored values.
pub(crate) fn put_bits(x: &mut [i64], start: usize, bits: &[i64], fmt: FixedFormat) {
    let one = 1i64 << fmt.frac_bits;
    for (k, &b) in bits.iter().enumerate() {
        x[start + k] = b * one;
    }
}

/// Reads stored bits back, rounding each to 0 or 1.
pub(crate) fn read_bits(y: &[i64], start: usize, count: usize, fmt: FixedFormat) -> Vec<i64> {
    let half = 1i64 << fmt.frac_bits.saturating_sub(1);
    (0..count).map(|k| i64::from(y[start + k] >= half)).collect()
}

/// Clamps a possibly corrupted index into `[1, hi]`.
pub(crate) fn clamp_index(v: i64, hi: u64) -> u64 {
    v.clamp(1, hi.max(1) as i64) as u64
}

pub(crate) fn largest_carried(params: &TaskParams) -> u64 {
    params.max_domain().max(params.query_count()).max(params.l as u64 + 1)
}
