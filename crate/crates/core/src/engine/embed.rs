use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::builders::cot::CotEmbed;
use crate::builders::depth::DepthEmbed;
use crate::builders::encoder::EncoderEmbed;
use crate::numerics::{quantize_scaled, FixedFormat, QuantCtx};
use crate::task::Token;
use crate::{Error, Result};

/// Named token embedders. Each maps a token and its position to `x^(0)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Embedder {
    Affine(AffineEmbed),
    Positional(PositionalEmbed),
    DepthSolver(DepthEmbed),
    CotSolver(CotEmbed),
    EncoderSolver(EncoderEmbed),
}

impl Embedder {
    pub fn width(&self) -> Option<usize> {
        match self {
            Embedder::Affine(e) => Some(e.weight.rows()),
            Embedder::Positional(e) => e.vectors.first().map(Vec::len),
            Embedder::DepthSolver(e) => Some(e.layout.width),
            Embedder::CotSolver(e) => Some(e.layout.width),
            Embedder::EncoderSolver(e) => Some(e.layout.width),
        }
    }

    pub fn embed(&self, token: &Token, position: usize, fmt: FixedFormat, ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        match self {
            Embedder::Affine(e) => e.embed(token, position, fmt, ctx),
            Embedder::Positional(e) => e.embed(token, position, fmt, ctx),
            Embedder::DepthSolver(e) => e.embed(token, position, fmt, ctx),
            Embedder::CotSolver(e) => e.embed(token, position, fmt, ctx),
            Embedder::EncoderSolver(e) => e.embed(token, position, fmt, ctx),
        }
    }
}

/// `x = W · (1, block, index, value, position)` with `W` in raw units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineEmbed {
    pub weight: Matrix,
    #[serde(rename = "maxBlock")]
    pub max_block: i32,
    #[serde(rename = "maxIndex")]
    pub max_index: u64,
    #[serde(rename = "maxValue")]
    pub max_value: u64,
}

impl AffineEmbed {
    pub const FEATURES: usize = 5;

    fn embed(&self, t: &Token, position: usize, fmt: FixedFormat, ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        if t.block < -1 || t.block > self.max_block {
            return Err(Error::Vocabulary {
                position,
                reason: format!("block {} outside [-1, {}]", t.block, self.max_block),
            });
        }
        if t.index == 0 || t.index > self.max_index {
            return Err(Error::Vocabulary {
                position,
                reason: format!("index {} outside [1, {}]", t.index, self.max_index),
            });
        }
        if t.value > self.max_value {
            return Err(Error::Vocabulary {
                position,
                reason: format!("value {} above {}", t.value, self.max_value),
            });
        }
        let feats = [1, t.block as i64, t.index as i64, t.value as i64, position as i64];
        let raw = self.weight.mul_vec(&feats)?;
        Ok(raw.into_iter().map(|v| quantize_scaled(v, fmt.frac_bits, fmt, ctx)).collect())
    }
}

/// A fixed vector per position, with the token value optionally added
/// (as an integer) into one slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEmbed {
    pub vectors: Vec<Vec<i64>>,
    #[serde(rename = "valueSlot", default, skip_serializing_if = "Option::is_none")]
    pub value_slot: Option<usize>,
}

impl PositionalEmbed {
    fn embed(&self, t: &Token, position: usize, fmt: FixedFormat, ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        let mut v = self
            .vectors
            .get(position)
            .cloned()
            .ok_or_else(|| Error::Vocabulary {
                position,
                reason: format!("only {} positions are defined", self.vectors.len()),
            })?;
        if let Some(slot) = self.value_slot {
            let add = (v[slot] as i128) + ((t.value as i128) << fmt.frac_bits);
            v[slot] = quantize_scaled(add, fmt.frac_bits, fmt, ctx);
        }
        Ok(v)
    }
}
