use serde::{Deserialize, Serialize};

use super::mlp::round_to_int;
use crate::builders::cot::CotDecode;
use crate::numerics::FixedFormat;
use crate::task::Token;
use crate::{Error, Result};

/// How the final vector at the last position becomes an answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Readout {
    /// The raw vector itself.
    Vector,
    /// The nearest integer to one slot.
    Slot { slot: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Answer {
    Vector { raw: Vec<i64> },
    Integer { value: i64 },
}

impl Answer {
    pub fn integer(&self) -> Option<i64> {
        match self {
            Answer::Integer { value } => Some(*value),
            Answer::Vector { .. } => None,
        }
    }
}

impl Readout {
    pub fn read(&self, last: &[i64], fmt: FixedFormat) -> Result<Answer> {
        match self {
            Readout::Vector => Ok(Answer::Vector { raw: last.to_vec() }),
            Readout::Slot { slot } => {
                let raw = last
                    .get(*slot)
                    .ok_or_else(|| Error::Spec(format!("readout slot {slot} outside width {}", last.len())))?;
                Ok(Answer::Integer {
                    value: round_to_int(*raw, fmt),
                })
            }
        }
    }
}

/// Maps the last position's final vector to the next token of a
/// chain-of-thought loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Decoder {
    /// Token `(block, step, round(x[slot]))`.
    SlotToken { slot: usize, block: i32 },
    CotSolver(CotDecode),
}

impl Decoder {
    pub fn decode(&self, last: &[i64], step: usize, fmt: FixedFormat) -> Result<Token> {
        match self {
            Decoder::SlotToken { slot, block } => {
                let raw = last.get(*slot).ok_or_else(|| Error::Decode {
                    step,
                    reason: format!("slot {slot} outside width {}", last.len()),
                })?;
                let v = round_to_int(*raw, fmt);
                if v < 0 {
                    return Err(Error::Decode {
                        step,
                        reason: format!("negative token value {v}"),
                    });
                }
                Ok(Token {
                    block: *block,
                    index: step as u64,
                    value: v as u64,
                })
            }
            Decoder::CotSolver(d) => d.decode(last, step, fmt),
        }
    }
}
