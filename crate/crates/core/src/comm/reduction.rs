//! Any causal decoder as a protocol.
//!
//! Player `i` can compute `x^(ℓ)_r` for its own positions `r ∈ E_i` once it
//! holds, for every head and every such `r`, the exact sums
//! `Σ_{t∈E_j} exp(q_r·k_t)·V x_t` and `Σ_{t∈E_j} exp(q_r·k_t)` from each
//! player `j > i` whose positions precede its own. Player `j` can produce
//! them because it sees player `i`'s whole state and so can replay
//! `x^(ℓ-1)_r` itself. Adding the contribution of `E_i` and dividing gives
//! exactly the engine's attention output, since all sums are exact.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{players_for, run_protocol, task_inputs, tokens_for, Payload, PlayerState, Protocol};
use crate::engine::attention::{project_key_value, project_query, row_range, PartialSums};
use crate::engine::{forward, Answer, Mask, TransformerSpec};
use crate::numerics::{quantize_ratio, QuantCtx};
use crate::task::{generate, generate_with, tokenize, TaskParams};
use crate::{Error, Result};

pub struct TransformerProtocol {
    spec: TransformerSpec,
    params: TaskParams,
    blocks: BTreeMap<i32, Range<usize>>,
    prompt_len: usize,
}

impl TransformerProtocol {
    pub fn new(spec: TransformerSpec, params: TaskParams) -> Result<Self> {
        spec.validate()?;
        if spec.mask != Mask::Causal {
            return Err(Error::Unsupported("the reduction needs a causal mask".into()));
        }
        let layout = tokenize(&generate(&params, 0));
        let blocks = layout.blocks.iter().map(|(&p, r)| (p, r.range())).collect();
        Ok(Self {
            spec,
            params,
            blocks,
            prompt_len: layout.len(),
        })
    }

    pub fn spec(&self) -> &TransformerSpec {
        &self.spec
    }

    pub fn params(&self) -> &TaskParams {
        &self.params
    }

    fn block(&self, player: i32) -> Result<Range<usize>> {
        self.blocks
            .get(&player)
            .cloned()
            .ok_or_else(|| Error::InvalidParams(format!("no block for player {player}")))
    }

    /// Words per `(r, h)` entry: `d` numerator sums and one normaliser.
    fn entry_words(&self) -> usize {
        self.spec.head_dim() + 1
    }

    /// `x^(upto)` at the player's own positions, from its state alone.
    pub fn local_activations(&self, state: &PlayerState, upto: usize) -> Result<Vec<Vec<i64>>> {
        let spec = &self.spec;
        let fmt = spec.format;
        let d = spec.head_dim();
        let heads = spec.layers.first().map_or(0, |l| l.heads.len());
        let own = self.block(state.player)?;
        let mut ctx = QuantCtx::default();
        let mut x = state
            .input
            .iter()
            .zip(own.clone())
            .map(|(t, pos)| spec.embed.embed(t, pos, fmt, &mut ctx))
            .collect::<Result<Vec<_>>>()?;
        for epoch in 1..=upto {
            let layer = &spec.layers[epoch - 1];
            let incoming = state
                .received_in(epoch)
                .map(|t| match &t.payload {
                    Payload::Words { words, .. } if words.len() == own.len() * heads * self.entry_words() => {
                        Ok(words.as_slice())
                    }
                    _ => Err(Error::ProtocolViolation {
                        epoch,
                        sender: t.sender as i64,
                        receiver: state.player as i64,
                        reason: "message is not a block of partial sums".into(),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let kv = layer
                .heads
                .iter()
                .map(|head| {
                    own.clone()
                        .zip(&x)
                        .map(|(t, xt)| project_key_value(head, t, xt))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut next = Vec::with_capacity(own.len());
            for (ri, r) in own.clone().enumerate() {
                let mut y = Vec::with_capacity(spec.width());
                for (h, head) in layer.heads.iter().enumerate() {
                    let q = project_query(head, r, &x[ri])?;
                    let mut sums = PartialSums::new(d);
                    let row = row_range(spec.mask, r, self.prompt_len);
                    for (ti, t) in own.clone().enumerate() {
                        if row.contains(&t) {
                            let (k, v) = &kv[h][ti];
                            sums.add(&q, k, v, fmt)?;
                        }
                    }
                    let (mut num, mut den) = sums.totals();
                    let base = (ri * heads + h) * self.entry_words();
                    for words in &incoming {
                        for (c, n) in num.iter_mut().enumerate() {
                            *n = &*n + &words[base + c];
                        }
                        den = &den + &words[base + d];
                    }
                    y.extend(num.iter().map(|n| quantize_ratio(n, &den, fmt, &mut ctx)));
                }
                next.push(layer.mlp_at(r).apply(&y, r, fmt, &mut ctx)?);
            }
            x = next;
        }
        Ok(x)
    }
}

impl Protocol for TransformerProtocol {
    fn epochs(&self) -> usize {
        self.spec.layers.len()
    }

    fn players(&self) -> Vec<i32> {
        players_for(&self.params)
    }

    fn tokens(&self, player: i32) -> usize {
        tokens_for(&self.params, player)
    }

    fn budget(&self) -> u64 {
        self.spec.dims.hdp()
    }

    /// `|E_i|·H·(dp + p)`.
    fn message_size(&self, _epoch: usize, _sender: i32, receiver: i32) -> u64 {
        let dims = self.spec.dims;
        self.tokens(receiver) as u64 * dims.h * (dims.d * dims.p + dims.p)
    }

    fn respond(&self, epoch: usize, sender: &PlayerState, receiver: &PlayerState) -> Result<Payload> {
        let spec = &self.spec;
        let fmt = spec.format;
        let layer = &spec.layers[epoch - 1];
        let theirs = self.block(sender.player)?;
        let mine = self.block(receiver.player)?;
        let xs = self.local_activations(sender, epoch - 1)?;
        let xr = self.local_activations(receiver, epoch - 1)?;
        let mut words = Vec::with_capacity(mine.len() * layer.heads.len() * self.entry_words());
        let kv = layer
            .heads
            .iter()
            .map(|head| {
                theirs
                    .clone()
                    .zip(&xs)
                    .map(|(t, xt)| project_key_value(head, t, xt))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (ri, r) in mine.clone().enumerate() {
            let row = row_range(spec.mask, r, self.prompt_len);
            for (h, head) in layer.heads.iter().enumerate() {
                let q = project_query(head, r, &xr[ri])?;
                let mut sums = PartialSums::new(spec.head_dim());
                for (ti, t) in theirs.clone().enumerate() {
                    if row.contains(&t) {
                        let (k, v) = &kv[h][ti];
                        sums.add(&q, k, v, fmt)?;
                    }
                }
                let (num, den) = sums.totals();
                words.extend(num);
                words.push(den);
            }
        }
        Ok(Payload::Words {
            word_bits: spec.dims.p,
            words,
        })
    }

    fn output(&self, state: &PlayerState) -> Result<Answer> {
        let x = self.local_activations(state, self.epochs())?;
        let last = x.last().ok_or(Error::Empty("output player block"))?;
        self.spec.readout.read(last, self.spec.format)
    }
}

/// Message sizes towards one receiver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizeCheck {
    pub receiver: i32,
    pub tokens: usize,
    /// `|E_i|·H·(dp + p)`.
    pub formula: u64,
    /// Largest size seen across all runs.
    pub observed: u64,
    /// `2·B·m_(i)`.
    pub capacity: u64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReductionReport {
    pub trials: usize,
    pub seed: u64,
    pub epochs: usize,
    pub budget: u64,
    pub matches: usize,
    /// Seeds of the instances whose answers differed.
    pub mismatches: Vec<u64>,
    pub sizes: Vec<SizeCheck>,
    pub passed: bool,
}

/// Runs the protocol and the engine on `trials` random instances (instance
/// `t` drawn with seed `seed + t`) and compares answers bit for bit.
pub fn verify_reduction(spec: &TransformerSpec, params: &TaskParams, trials: usize, seed: u64) -> Result<ReductionReport> {
    let proto = TransformerProtocol::new(spec.clone(), params.clone())?;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let inst_seed = seed.wrapping_add(t as u64);
            let prompt = tokenize(&generate(params, inst_seed));
            let direct = spec.answer(&forward(spec, &prompt)?)?;
            let run = run_protocol(&proto, &task_inputs(&prompt))?;
            let mut sizes = BTreeMap::new();
            for tr in &run.transcripts {
                let e = sizes.entry(tr.receiver).or_insert(0u64);
                *e = (*e).max(tr.size());
            }
            Ok((inst_seed, run.answer == direct, sizes))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut observed: BTreeMap<i32, u64> = BTreeMap::new();
    let mut matches = 0;
    let mut mismatches = Vec::new();
    for (s, ok, sizes) in outcomes {
        if ok {
            matches += 1;
        } else {
            mismatches.push(s);
        }
        for (r, v) in sizes {
            let e = observed.entry(r).or_insert(0);
            *e = (*e).max(v);
        }
    }
    let sizes: Vec<SizeCheck> = proto
        .players()
        .into_iter()
        .filter(|&p| p < params.l as i32)
        .map(|p| {
            let formula = proto.message_size(1, p + 1, p);
            let capacity = proto.capacity(p);
            let seen = observed.get(&p).copied().unwrap_or(0);
            SizeCheck {
                receiver: p,
                tokens: proto.tokens(p),
                formula,
                observed: seen,
                capacity,
                ok: (trials == 0 || seen == formula) && formula <= capacity,
            }
        })
        .collect();
    let passed = mismatches.is_empty() && sizes.iter().all(|s| s.ok);
    Ok(ReductionReport {
        trials,
        seed,
        epochs: proto.epochs(),
        budget: proto.budget(),
        matches,
        mismatches,
        sizes,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LocalityViolation {
    pub trial: usize,
    pub epoch: usize,
    pub sender: i32,
    pub receiver: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LocalityReport {
    pub trials: usize,
    /// Messages compared across all trials.
    pub compared: usize,
    pub violations: Vec<LocalityViolation>,
}

/// Draws an instance, picks a receiver `i ≥ 0`, redraws the inputs of a
/// random non-empty set of players below `i`, and checks that every message
/// to a player `≥ i` is unchanged.
pub fn check_locality<P: Protocol>(def: &P, params: &TaskParams, trials: usize, seed: u64) -> Result<LocalityReport> {
    let results = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let base = task_inputs(&tokenize(&generate_with(params, &mut rng)));
            let other = task_inputs(&tokenize(&generate_with(params, &mut rng)));
            let pivot = rng.gen_range(0..=params.l as i32);
            let below: Vec<i32> = (-1..pivot).collect();
            let mut changed = base.clone();
            loop {
                let mut any = false;
                for &p in &below {
                    if rng.gen_bool(0.5) {
                        changed.insert(p, other[&p].clone());
                        any = true;
                    }
                }
                if any {
                    break;
                }
            }
            let a = run_protocol(def, &base)?;
            let b = run_protocol(def, &changed)?;
            let mut compared = 0;
            let mut bad = Vec::new();
            for t in a.transcripts.iter().filter(|t| t.receiver >= pivot) {
                compared += 1;
                if b.transcript(t.epoch, t.sender, t.receiver) != Some(t) {
                    bad.push(LocalityViolation {
                        trial,
                        epoch: t.epoch,
                        sender: t.sender,
                        receiver: t.receiver,
                    });
                }
            }
            Ok((compared, bad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = LocalityReport {
        trials,
        compared: 0,
        violations: Vec::new(),
    };
    for (c, bad) in results {
        report.compared += c;
        report.violations.extend(bad);
    }
    Ok(report)
}
