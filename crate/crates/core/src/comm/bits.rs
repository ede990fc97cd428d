use serde::{Deserialize, Serialize};

use super::{players_for, tokens_for, Payload, PlayerState, Protocol, OUTPUT_PLAYER};
use crate::engine::Answer;
use crate::task::TaskParams;
use crate::{Error, Result};

/// How a [`BitProtocol`] fills each message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum BitRule {
    /// All zeros.
    Constant,
    /// The leading bits of the sender's state, zero-padded.
    Forward,
    /// Pseudo-random bits keyed by both states.
    Hash { seed: u64 },
}

/// Protocols that send plain bits on the task's player layout, always
/// using the full `2·B·m_(i)` bits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitProtocol {
    pub params: TaskParams,
    #[serde(rename = "bitsPerToken")]
    pub bits_per_token: u64,
    pub rule: BitRule,
}

impl BitProtocol {
    pub fn new(params: TaskParams, bits_per_token: u64, rule: BitRule) -> Result<Self> {
        if bits_per_token == 0 {
            return Err(Error::InvalidParams("bits per token must be at least 1".into()));
        }
        Ok(Self {
            params,
            bits_per_token,
            rule,
        })
    }

    /// Bits used to write one token value.
    pub fn value_width(&self) -> u32 {
        let p = &self.params;
        let max = p.max_domain().max(p.m).max(p.query_count());
        64 - max.leading_zeros()
    }

    /// The state as a bit string: token values (LSB first, fixed width),
    /// then the bits of every received message in order.
    fn state_bits<'a>(&self, s: &'a PlayerState) -> impl Iterator<Item = bool> + 'a {
        let width = self.value_width();
        let values = s
            .input
            .iter()
            .flat_map(move |t| (0..width).map(move |k| (t.value >> k) & 1 == 1));
        let messages = s.received.iter().flat_map(|t| match &t.payload {
            Payload::Bits { bits } => bits.clone(),
            Payload::Words { .. } => Vec::new(),
        });
        values.chain(messages)
    }

    /// Reads the token values back out of a forwarded bit string.
    pub fn decode_values(&self, bits: &[bool]) -> Vec<u64> {
        let width = self.value_width() as usize;
        bits.chunks_exact(width)
            .map(|c| c.iter().enumerate().fold(0u64, |v, (k, &b)| v | ((b as u64) << k)))
            .collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(h: u64, word: u64) -> u64 {
    mix(h ^ word)
}

fn digest(h: u64, s: &PlayerState) -> u64 {
    let mut h = absorb(h, s.player as u64);
    for t in &s.input {
        h = absorb(h, t.value);
    }
    for t in &s.received {
        h = absorb(h, ((t.epoch as u64) << 32) | t.sender as u32 as u64);
        if let Payload::Bits { bits } = &t.payload {
            for chunk in bits.chunks(64) {
                h = absorb(h, chunk.iter().enumerate().fold(0u64, |v, (k, &b)| v | ((b as u64) << k)));
            }
            h = absorb(h, bits.len() as u64);
        }
    }
    h
}

impl Protocol for BitProtocol {
    fn epochs(&self) -> usize {
        self.params.l
    }

    fn players(&self) -> Vec<i32> {
        players_for(&self.params)
    }

    fn tokens(&self, player: i32) -> usize {
        tokens_for(&self.params, player)
    }

    fn budget(&self) -> u64 {
        self.bits_per_token
    }

    fn respond(&self, epoch: usize, sender: &PlayerState, receiver: &PlayerState) -> Result<Payload> {
        let size = self.capacity(receiver.player) as usize;
        let bits = match &self.rule {
            BitRule::Constant => vec![false; size],
            BitRule::Forward => {
                let mut b: Vec<bool> = self.state_bits(sender).take(size).collect();
                b.resize(size, false);
                b
            }
            BitRule::Hash { seed } => {
                let key = digest(digest(absorb(*seed, epoch as u64), sender), receiver);
                (0..size)
                    .map(|k| (mix(key ^ (k as u64 / 64)) >> (k % 64)) & 1 == 1)
                    .collect()
            }
        };
        Ok(Payload::Bits { bits })
    }

    /// Forwarders decode the last message from player `L` into token
    /// values; the other rules read the first 63 received bits as an
    /// integer.
    fn output(&self, state: &PlayerState) -> Result<Answer> {
        debug_assert_eq!(state.player, OUTPUT_PLAYER);
        let top = self.params.l as i32;
        match self.rule {
            BitRule::Forward => {
                let last = state.received.iter().rev().find(|t| t.sender == top);
                let raw = match last.map(|t| &t.payload) {
                    Some(Payload::Bits { bits }) => self.decode_values(bits).into_iter().map(|v| v as i64).collect(),
                    _ => Vec::new(),
                };
                Ok(Answer::Vector { raw })
            }
            _ => {
                let value = state
                    .received
                    .iter()
                    .flat_map(|t| match &t.payload {
                        Payload::Bits { bits } => bits.clone(),
                        Payload::Words { .. } => Vec::new(),
                    })
                    .take(63)
                    .enumerate()
                    .fold(0i64, |v, (k, b)| v | ((b as i64) << k));
                Ok(Answer::Integer { value })
            }
        }
    }
}
