//! Fooling pairs: two inputs of player `L` that player -1 cannot tell apart
//! but whose correct answers differ.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_protocol, task_inputs, Payload, Protocol, ProtocolRun, OUTPUT_PLAYER};
use crate::canonical::hex;
use crate::engine::Answer;
use crate::task::{evaluate, generate, pair, tokenize, TaskInstance, TaskParams};
use crate::{Error, Result};

/// Families larger than this are refused.
pub const MAX_FAMILY: u64 = 1 << 20;

/// Which inputs of player `L` the family ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum FamilyVary {
    /// Every value of the one entry of `z_L` the chain reads.
    QueriedEntry,
    /// Every table `z_L`.
    AllTables,
}

/// A base instance with player `L`'s table ranging over a set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoolingFamily {
    pub base: TaskInstance,
    pub vary: FamilyVary,
    size: u64,
    entry: usize,
}

impl FoolingFamily {
    pub fn new(params: &TaskParams, seed: u64, vary: FamilyVary) -> Result<Self> {
        let base = generate(params, seed);
        let top = params.l;
        let domain = params.domain(top - 1);
        let size = match vary {
            FamilyVary::QueriedEntry => Some(domain),
            FamilyVary::AllTables => u32::try_from(domain).ok().and_then(|e| domain.checked_pow(e)),
        }
        .filter(|&s| s <= MAX_FAMILY)
        .ok_or_else(|| Error::Capacity(format!("family larger than {MAX_FAMILY} members")))?;
        let chain = evaluate(&base)?;
        let entry = if top == 1 {
            base.z0 as usize - 1
        } else {
            let k = top - 1;
            pair(base.w[k - 1], chain.i[k], params.query_size(k), params.domain(k - 1))? as usize - 1
        };
        Ok(Self {
            base,
            vary,
            size,
            entry,
        })
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Member `k` in a fixed order.
    pub fn member(&self, k: usize) -> TaskInstance {
        let mut inst = self.base.clone();
        let top = inst.params.l;
        let domain = inst.params.domain(top - 1);
        let table = &mut inst.z[top - 1];
        match self.vary {
            FamilyVary::QueriedEntry => table[self.entry] = k as u64 + 1,
            FamilyVary::AllTables => {
                let mut rest = k as u64;
                for v in table.iter_mut() {
                    *v = rest % domain + 1;
                    rest /= domain;
                }
            }
        }
        inst
    }
}

/// The correct answer of an instance, as an integer answer.
pub fn task_answer(inst: &TaskInstance) -> Result<Answer> {
    Ok(Answer::Integer {
        value: evaluate(inst)?.answer() as i64,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoolingPair {
    pub first: usize,
    pub second: usize,
    #[serde(rename = "firstTable")]
    pub first_table: Vec<u64>,
    #[serde(rename = "secondTable")]
    pub second_table: Vec<u64>,
    #[serde(rename = "firstAnswer")]
    pub first_answer: Answer,
    #[serde(rename = "secondAnswer")]
    pub second_answer: Answer,
    /// Player -1's view, shared by both runs.
    pub view: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoolingReport {
    #[serde(rename = "familySize")]
    pub family_size: usize,
    #[serde(rename = "distinctAnswers")]
    pub distinct_answers: usize,
    #[serde(rename = "distinctViews")]
    pub distinct_views: usize,
    /// Accounted bits received by player -1 in one run.
    #[serde(rename = "viewBits")]
    pub view_bits: u64,
    /// True when every message is plain bits, so the views really take at
    /// most `2^viewBits` values.
    #[serde(rename = "bitsOnly")]
    pub bits_only: bool,
    /// More answers than possible views: a pair must exist.
    pub guaranteed: bool,
    pub pair: Option<FoolingPair>,
}

fn bits_only(run: &ProtocolRun) -> bool {
    run.transcripts
        .iter()
        .all(|t| matches!(t.payload, Payload::Bits { .. }))
}

/// Buckets the family by player -1's view and returns the first member
/// (in family order) whose answer differs from the first member of its
/// bucket, paired with that first member.
pub fn find_fooling_pair<P, F>(def: &P, family: &FoolingFamily, oracle: F) -> Result<FoolingReport>
where
    P: Protocol,
    F: Fn(&TaskInstance) -> Result<Answer> + Sync,
{
    let rows = (0..family.len())
        .into_par_iter()
        .map(|k| {
            let inst = family.member(k);
            let run = run_protocol(def, &task_inputs(&tokenize(&inst)))?;
            let answer = oracle(&inst)?;
            Ok((run.view(OUTPUT_PLAYER), answer, run.received_bits(OUTPUT_PLAYER), bits_only(&run)))
        })
        .collect::<Result<Vec<_>>>()?;
    let view_bits = rows.iter().map(|r| r.2).max().unwrap_or(0);
    let only_bits = rows.iter().all(|r| r.3);
    let answers: BTreeSet<&Answer> = rows.iter().map(|r| &r.1).collect();
    let mut buckets: BTreeMap<&[u8], usize> = BTreeMap::new();
    let mut pair = None;
    for (k, (view, answer, _, _)) in rows.iter().enumerate() {
        let first = *buckets.entry(view.as_slice()).or_insert(k);
        if pair.is_none() && rows[first].1 != *answer {
            let top = family.base.params.l;
            pair = Some(FoolingPair {
                first,
                second: k,
                first_table: family.member(first).z[top - 1].clone(),
                second_table: family.member(k).z[top - 1].clone(),
                first_answer: rows[first].1.clone(),
                second_answer: answer.clone(),
                view: hex(view),
            });
        }
    }
    let guaranteed = only_bits && view_bits < 64 && answers.len() as u128 > 1u128 << view_bits;
    if guaranteed && pair.is_none() {
        return Err(Error::Invariant(format!(
            "{} answers over {} bits of view but no fooling pair",
            answers.len(),
            view_bits
        )));
    }
    Ok(FoolingReport {
        family_size: family.len(),
        distinct_answers: answers.len(),
        distinct_views: buckets.len(),
        view_bits,
        bits_only: only_bits,
        guaranteed,
        pair,
    })
}

/// Replays both members of a pair: their views must be byte-identical and
/// their answers must differ and match the certificate.
pub fn certify_pair<P, F>(def: &P, family: &FoolingFamily, pair: &FoolingPair, oracle: F) -> Result<bool>
where
    P: Protocol,
    F: Fn(&TaskInstance) -> Result<Answer>,
{
    let a = family.member(pair.first);
    let b = family.member(pair.second);
    let va = run_protocol(def, &task_inputs(&tokenize(&a)))?.view(OUTPUT_PLAYER);
    let vb = run_protocol(def, &task_inputs(&tokenize(&b)))?.view(OUTPUT_PLAYER);
    let (aa, ab) = (oracle(&a)?, oracle(&b)?);
    Ok(va == vb && hex(&va) == pair.view && aa != ab && aa == pair.first_answer && ab == pair.second_answer)
}
