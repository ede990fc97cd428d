//! The autoregressive communication model.
//!
//! Players are `-1, 0, 1, …, L`. Player `i` holds the tokens of block `E_i`
//! (player `ℓ ≥ 1` the table `z_ℓ`, player 0 the start value, player -1 the
//! query). In epoch `ℓ` every player `i` hands its whole state to each
//! player `j > i`, and `j` answers with a bounded message `Π_{j,i}`. A
//! player's state is its input plus every message it has received. After
//! `L` epochs player -1 announces the answer from its state.

mod bits;
mod fooling;
mod reduction;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bits::{BitProtocol, BitRule};
pub use fooling::{certify_pair, find_fooling_pair, task_answer, FamilyVary, FoolingFamily, FoolingPair, FoolingReport};
pub use reduction::{
    check_locality, verify_reduction, LocalityReport, LocalityViolation, ReductionReport, SizeCheck, TransformerProtocol,
};

use crate::engine::Answer;
use crate::numerics::Dyadic;
use crate::task::{Prompt, TaskParams, Token};
use crate::{Error, Result};

/// Index of the player that announces the answer.
pub const OUTPUT_PLAYER: i32 = -1;

/// Players `-1..=L` in ascending order.
pub fn players_for(params: &TaskParams) -> Vec<i32> {
    (-1..=params.l as i32).collect()
}

/// Token count `m_(i)` of a player.
pub fn tokens_for(params: &TaskParams, player: i32) -> usize {
    if player >= 1 {
        params.domain(player as usize - 1) as usize
    } else {
        1
    }
}

/// Splits a prompt into per-player inputs.
pub fn task_inputs(prompt: &Prompt) -> BTreeMap<i32, Vec<Token>> {
    prompt
        .blocks
        .iter()
        .map(|(&p, r)| (p, prompt.tokens[r.range()].to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Payload {
    Bits { bits: Vec<bool> },
    /// Exact numbers, each accounted as `word_bits` bits.
    Words {
        #[serde(rename = "wordBits")]
        word_bits: u64,
        words: Vec<Dyadic>,
    },
}

impl Payload {
    /// Accounted size in bits.
    pub fn size(&self) -> u64 {
        match self {
            Payload::Bits { bits } => bits.len() as u64,
            Payload::Words { word_bits, words } => word_bits * words.len() as u64,
        }
    }

    fn append_bytes(&self, out: &mut Vec<u8>) {
        match self {
            Payload::Bits { bits } => {
                for chunk in bits.chunks(8) {
                    out.push(chunk.iter().enumerate().fold(0u8, |b, (k, &v)| b | ((v as u8) << k)));
                }
            }
            Payload::Words { words, .. } => {
                for w in words {
                    out.extend_from_slice(w.canonical().as_bytes());
                    out.push(b';');
                }
            }
        }
    }
}

/// One message `Π_{sender, receiver}` of one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub epoch: usize,
    pub sender: i32,
    pub receiver: i32,
    pub payload: Payload,
}

impl Transcript {
    pub fn size(&self) -> u64 {
        self.payload.size()
    }
}

/// What a player knows: its input and every message received so far, in
/// (epoch, sender) order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerState {
    pub player: i32,
    pub input: Vec<Token>,
    pub received: Vec<Transcript>,
}

impl PlayerState {
    /// Messages received in one epoch.
    pub fn received_in(&self, epoch: usize) -> impl Iterator<Item = &Transcript> {
        self.received.iter().filter(move |t| t.epoch == epoch)
    }

    /// True when `self` extends `earlier`.
    pub fn extends(&self, earlier: &PlayerState) -> bool {
        self.player == earlier.player
            && self.input == earlier.input
            && self.received.len() >= earlier.received.len()
            && self.received[..earlier.received.len()] == earlier.received[..]
    }
}

/// A deterministic protocol in the model.
pub trait Protocol: Sync {
    /// Number of epochs `L`.
    fn epochs(&self) -> usize;

    /// Players in ascending order; the first must be [`OUTPUT_PLAYER`].
    fn players(&self) -> Vec<i32>;

    /// Token count `m_(i)`.
    fn tokens(&self, player: i32) -> usize;

    /// Per-token budget `B`.
    fn budget(&self) -> u64;

    /// Largest message the model allows towards `receiver`: `2·B·m_(i)`.
    fn capacity(&self, receiver: i32) -> u64 {
        2 * self.budget() * self.tokens(receiver) as u64
    }

    /// Exact size the protocol promises for `Π_{sender, receiver}`.
    fn message_size(&self, _epoch: usize, _sender: i32, receiver: i32) -> u64 {
        self.capacity(receiver)
    }

    /// `Π_{sender, receiver}` of `epoch`, from the two states at the end of
    /// the previous epoch.
    fn respond(&self, epoch: usize, sender: &PlayerState, receiver: &PlayerState) -> Result<Payload>;

    /// The answer, from player -1's final state.
    fn output(&self, state: &PlayerState) -> Result<Answer>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolRun {
    /// `states[ℓ][k]` is the state of `players[k]` after epoch `ℓ`.
    pub states: Vec<Vec<PlayerState>>,
    pub players: Vec<i32>,
    /// In (epoch, receiver, sender) order.
    pub transcripts: Vec<Transcript>,
    pub answer: Answer,
}

impl ProtocolRun {
    pub fn state(&self, epoch: usize, player: i32) -> Option<&PlayerState> {
        let k = self.players.iter().position(|&p| p == player)?;
        self.states.get(epoch).map(|s| &s[k])
    }

    /// Every state extends the one before it.
    pub fn is_monotone(&self) -> bool {
        self.states
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b.extends(a)))
    }

    pub fn transcript(&self, epoch: usize, sender: i32, receiver: i32) -> Option<&Transcript> {
        self.transcripts
            .iter()
            .find(|t| t.epoch == epoch && t.sender == sender && t.receiver == receiver)
    }

    /// Bytes of everything `player` received, ordered by (epoch, sender).
    /// Each message is framed by its epoch, sender and size.
    pub fn view(&self, player: i32) -> Vec<u8> {
        let mut received: Vec<&Transcript> = self.transcripts.iter().filter(|t| t.receiver == player).collect();
        received.sort_by_key(|t| (t.epoch, t.sender));
        let mut out = Vec::new();
        for t in received {
            out.extend_from_slice(&(t.epoch as u32).to_le_bytes());
            out.extend_from_slice(&t.sender.to_le_bytes());
            out.extend_from_slice(&t.size().to_le_bytes());
            t.payload.append_bytes(&mut out);
        }
        out
    }

    /// Accounted bits received by `player` over the whole run.
    pub fn received_bits(&self, player: i32) -> u64 {
        self.transcripts
            .iter()
            .filter(|t| t.receiver == player)
            .map(Transcript::size)
            .sum()
    }
}

/// Simulates a protocol epoch by epoch.
pub fn run_protocol<P: Protocol + ?Sized>(def: &P, inputs: &BTreeMap<i32, Vec<Token>>) -> Result<ProtocolRun> {
    let players = def.players();
    if players.first() != Some(&OUTPUT_PLAYER) || players.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams(
            "players must be ascending and start with the output player".into(),
        ));
    }
    let mut current = Vec::with_capacity(players.len());
    for &p in &players {
        let input = inputs
            .get(&p)
            .ok_or_else(|| Error::InvalidParams(format!("no input for player {p}")))?;
        if input.len() != def.tokens(p) {
            return Err(Error::InvalidParams(format!(
                "player {p} has {} tokens, expected {}",
                input.len(),
                def.tokens(p)
            )));
        }
        current.push(PlayerState {
            player: p,
            input: input.clone(),
            received: Vec::new(),
        });
    }
    if inputs.len() != players.len() {
        return Err(Error::InvalidParams(format!(
            "{} inputs for {} players",
            inputs.len(),
            players.len()
        )));
    }
    let mut states = vec![current.clone()];
    let mut transcripts = Vec::new();
    for epoch in 1..=def.epochs() {
        let prev = states.last().unwrap();
        for (ri, receiver) in prev.iter().enumerate() {
            for sender in &prev[ri + 1..] {
                let violation = |reason: String| Error::ProtocolViolation {
                    epoch,
                    sender: sender.player as i64,
                    receiver: receiver.player as i64,
                    reason,
                };
                let payload = def.respond(epoch, sender, receiver)?;
                let size = payload.size();
                let promised = def.message_size(epoch, sender.player, receiver.player);
                let cap = def.capacity(receiver.player);
                if size != promised {
                    return Err(violation(format!("message has {size} bits, the protocol promises {promised}")));
                }
                if size > cap {
                    return Err(violation(format!("message has {size} bits, the model allows {cap}")));
                }
                let t = Transcript {
                    epoch,
                    sender: sender.player,
                    receiver: receiver.player,
                    payload,
                };
                current[ri].received.push(t.clone());
                transcripts.push(t);
            }
        }
        states.push(current.clone());
    }
    let answer = def.output(&current[0])?;
    Ok(ProtocolRun {
        states,
        players,
        transcripts,
        answer,
    })
}
