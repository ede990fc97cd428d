//! L-sequential function composition.
//!
//! An instance consists of a start value `z_0 ∈ [m]`, tables `z_1..z_L`
//! (table `z_ℓ` maps `[N_{ℓ-1}]` into itself) and a query `w = (w_1..w_{L-1})`.
//! The chain is `i_0 = z_0`, `i_1 = z_1(i_0)` and
//! `i_{ℓ+1} = z_{ℓ+1}(pair(w_ℓ, i_ℓ))`. All values are 1-based.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Version tag written into every serialized instance and prompt.
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the prompt length we agree to materialise.
pub const MAX_PROMPT_LEN: u64 = 1 << 24;

/// Block id of the query token.
pub const QUERY_BLOCK: i32 = -1;

/// Block id of the start-value token.
pub const START_BLOCK: i32 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TaskParams {
    #[serde(rename = "L")]
    pub l: usize,
    pub m: u64,
    pub n: Vec<u64>,
    #[serde(rename = "N")]
    pub big_n: Vec<u64>,
}

#[derive(Deserialize)]
struct RawParams {
    #[serde(rename = "L")]
    l: usize,
    m: u64,
    #[serde(default)]
    n: Vec<u64>,
    #[serde(rename = "N", default)]
    big_n: Option<Vec<u64>>,
}

impl<'de> Deserialize<'de> for TaskParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawParams::deserialize(d)?;
        let p = TaskParams::new(raw.l, raw.m, raw.n).map_err(serde::de::Error::custom)?;
        if let Some(given) = raw.big_n {
            if given != p.big_n {
                return Err(serde::de::Error::custom(format!(
                    "N = {given:?} does not match derived {:?}",
                    p.big_n
                )));
            }
        }
        Ok(p)
    }
}

impl TaskParams {
    /// `n` lists `n_1..n_{L-1}`; `N` is derived.
    pub fn new(l: usize, m: u64, n: Vec<u64>) -> Result<Self> {
        let mut problems = Vec::new();
        if l == 0 {
            problems.push("L must be at least 1".to_string());
        }
        if m == 0 {
            problems.push("m must be at least 1".to_string());
        }
        if l > 0 && n.len() != l - 1 {
            problems.push(format!("expected {} query sizes n_1..n_(L-1), got {}", l - 1, n.len()));
        }
        for (k, &v) in n.iter().enumerate() {
            if v == 0 {
                problems.push(format!("n_{} must be at least 1", k + 1));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let mut big_n = vec![m];
        for &v in &n {
            let next = big_n
                .last()
                .unwrap()
                .checked_mul(v)
                .ok_or(Error::Overflow("domain sizes N_l"))?;
            big_n.push(next);
        }
        let p = Self { l, m, n, big_n };
        let len = p.prompt_len_u128();
        if len > MAX_PROMPT_LEN as u128 {
            return Err(Error::Capacity(format!(
                "prompt length {len} exceeds the limit of {MAX_PROMPT_LEN} tokens"
            )));
        }
        Ok(p)
    }

    /// `N_ℓ` for `ℓ ∈ [0, L-1]`.
    pub fn domain(&self, ell: usize) -> u64 {
        self.big_n[ell]
    }

    /// `n_ℓ` for `ℓ ∈ [1, L-1]`.
    pub fn query_size(&self, ell: usize) -> u64 {
        self.n[ell - 1]
    }

    /// Largest `N_ℓ`.
    pub fn max_domain(&self) -> u64 {
        *self.big_n.iter().max().unwrap()
    }

    fn prompt_len_u128(&self) -> u128 {
        self.big_n.iter().map(|&v| v as u128).sum::<u128>() + 2
    }

    /// `Σ_ℓ N_{ℓ-1} + 2`.
    pub fn prompt_len(&self) -> usize {
        self.prompt_len_u128() as usize
    }

    /// Number of distinct packed query values `∏ n_ℓ` (1 for `L = 1`).
    pub fn query_count(&self) -> u64 {
        self.n.iter().product()
    }

    /// Number of instances, if it fits in a `u128`.
    pub fn instance_count(&self) -> Option<u128> {
        let mut total = self.m as u128;
        for &size in &self.big_n {
            total = total.checked_mul((size as u128).checked_pow(u32::try_from(size).ok()?)?)?;
        }
        total.checked_mul(self.query_count() as u128)
    }
}

/// `(wcomp − 1)·N_{ℓ-1} + i`, the bijection `[n_ℓ] × [N_{ℓ-1}] → [N_ℓ]`.
pub fn pair(wcomp: u64, i: u64, n_ell: u64, domain_prev: u64) -> Result<u64> {
    check_range("pair: query component", wcomp, n_ell)?;
    check_range("pair: index", i, domain_prev)?;
    Ok((wcomp - 1) * domain_prev + i)
}

/// Inverse of [`pair`].
pub fn unpair(j: u64, n_ell: u64, domain_prev: u64) -> Result<(u64, u64)> {
    check_range("unpair: index", j, n_ell * domain_prev)?;
    Ok(((j - 1) / domain_prev + 1, (j - 1) % domain_prev + 1))
}

fn check_range(what: &'static str, v: u64, hi: u64) -> Result<()> {
    if v == 0 || v > hi {
        return Err(Error::Range {
            what,
            value: v as i128,
            lo: 1,
            hi: hi as i128,
        });
    }
    Ok(())
}

/// Mixed-radix packing of `w` into `[∏ n_ℓ]`; 0 for the empty query.
pub fn pack_query(w: &[u64], n: &[u64]) -> u64 {
    if w.is_empty() {
        return 0;
    }
    let mut packed = 0u64;
    let mut radix = 1u64;
    for (&wc, &size) in w.iter().zip(n) {
        packed += (wc - 1) * radix;
        radix *= size;
    }
    packed + 1
}

/// Inverse of [`pack_query`].
pub fn unpack_query(packed: u64, n: &[u64]) -> Result<Vec<u64>> {
    if n.is_empty() {
        if packed != 0 {
            return Err(Error::Range {
                what: "packed empty query",
                value: packed as i128,
                lo: 0,
                hi: 0,
            });
        }
        return Ok(Vec::new());
    }
    let total: u64 = n.iter().product();
    check_range("packed query", packed, total)?;
    let mut rest = packed - 1;
    Ok(n
        .iter()
        .map(|&size| {
            let c = rest % size + 1;
            rest /= size;
            c
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    #[serde(rename = "formatVersion")]
    pub format_version: u32,
    pub params: TaskParams,
    pub z0: u64,
    /// `z[ℓ-1]` is the table `z_ℓ`.
    pub z: Vec<Vec<u64>>,
    pub w: Vec<u64>,
}

impl TaskInstance {
    pub fn new(params: TaskParams, z0: u64, z: Vec<Vec<u64>>, w: Vec<u64>) -> Result<Self> {
        let inst = Self {
            format_version: FORMAT_VERSION,
            params,
            z0,
            z,
            w,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Table `z_ℓ` for `ℓ ∈ [1, L]`.
    pub fn table(&self, ell: usize) -> &[u64] {
        &self.z[ell - 1]
    }

    /// Collects every range violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let mut problems = Vec::new();
        if self.format_version != FORMAT_VERSION {
            problems.push(format!(
                "format version {} is not {FORMAT_VERSION}",
                self.format_version
            ));
        }
        if self.z0 == 0 || self.z0 > p.m {
            problems.push(format!("z0 = {} not in [1, {}]", self.z0, p.m));
        }
        if self.z.len() != p.l {
            problems.push(format!("expected {} tables, got {}", p.l, self.z.len()));
        }
        for (k, table) in self.z.iter().enumerate().take(p.l) {
            let size = p.big_n[k];
            if table.len() as u64 != size {
                problems.push(format!(
                    "table z_{} has length {}, expected {size}",
                    k + 1,
                    table.len()
                ));
            }
            for (t, &v) in table.iter().enumerate() {
                if v == 0 || v > size {
                    problems.push(format!("z_{}({}) = {v} not in [1, {size}]", k + 1, t + 1));
                }
            }
        }
        if self.w.len() != p.n.len() {
            problems.push(format!(
                "query has {} components, expected {}",
                self.w.len(),
                p.n.len()
            ));
        }
        for (k, (&wc, &size)) in self.w.iter().zip(&p.n).enumerate() {
            if wc == 0 || wc > size {
                problems.push(format!("w_{} = {wc} not in [1, {size}]", k + 1));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Packed query value carried by the query token.
    pub fn packed_query(&self) -> u64 {
        pack_query(&self.w, &self.params.n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionChain {
    /// `i_0..i_L`.
    pub i: Vec<u64>,
}

impl CompositionChain {
    pub fn answer(&self) -> u64 {
        *self.i.last().unwrap()
    }
}

/// Runs the composition chain.
pub fn evaluate(inst: &TaskInstance) -> Result<CompositionChain> {
    inst.validate()?;
    let p = &inst.params;
    let mut chain = Vec::with_capacity(p.l + 1);
    chain.push(inst.z0);
    let mut cur = inst.table(1)[(inst.z0 - 1) as usize];
    chain.push(cur);
    for ell in 1..p.l {
        let idx = pair(inst.w[ell - 1], cur, p.n[ell - 1], p.big_n[ell - 1])?;
        cur = inst.table(ell + 1)[(idx - 1) as usize];
        chain.push(cur);
    }
    Ok(CompositionChain { i: chain })
}

/// Draws an instance uniformly at random using ChaCha8 seeded from `seed`.
///
/// Draw order: `z_0`, then tables `z_1..z_L` entry by entry, then
/// `w_1..w_{L-1}`. Each draw is `gen_range(1..=size)`.
pub fn generate(params: &TaskParams, seed: u64) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(params, &mut rng)
}

/// Same as [`generate`] with a caller-supplied generator.
pub fn generate_with<R: Rng>(params: &TaskParams, rng: &mut R) -> TaskInstance {
    let z0 = rng.gen_range(1..=params.m);
    let z = params
        .big_n
        .iter()
        .map(|&size| (0..size).map(|_| rng.gen_range(1..=size)).collect())
        .collect();
    let w = params.n.iter().map(|&size| rng.gen_range(1..=size)).collect();
    TaskInstance {
        format_version: FORMAT_VERSION,
        params: params.clone(),
        z0,
        z,
        w,
    }
}

/// Decodes instance number `index` in a fixed enumeration order, for
/// exhaustive sweeps. `index` must be below [`TaskParams::instance_count`].
pub fn instance_at(params: &TaskParams, mut index: u128) -> TaskInstance {
    let mut take = |size: u64| {
        let v = (index % size as u128) as u64 + 1;
        index /= size as u128;
        v
    };
    let z0 = take(params.m);
    let z = params
        .big_n
        .iter()
        .map(|&size| (0..size).map(|_| take(size)).collect())
        .collect();
    let w = params.n.iter().map(|&size| take(size)).collect();
    TaskInstance {
        format_version: FORMAT_VERSION,
        params: params.clone(),
        z0,
        z,
        w,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    /// `ℓ ∈ [1, L]` for table entries, 0 for the start value, -1 for the query.
    pub block: i32,
    /// 1-based entry index inside the block.
    pub index: u64,
    pub value: u64,
}

/// Half-open position range of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub start: usize,
    pub end: usize,
}

impl BlockRange {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(rename = "formatVersion")]
    pub format_version: u32,
    pub tokens: Vec<Token>,
    pub blocks: BTreeMap<i32, BlockRange>,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Position range `E_i` of player `i`.
    pub fn block(&self, player: i32) -> Option<Range<usize>> {
        self.blocks.get(&player).map(BlockRange::range)
    }

    /// Player owning `position`, if the position belongs to a block.
    pub fn owner(&self, position: usize) -> Option<i32> {
        self.blocks
            .iter()
            .find(|(_, r)| r.range().contains(&position))
            .map(|(&b, _)| b)
    }

    /// Appends a generated token, as a chain-of-thought step does. Appended
    /// tokens belong to no block.
    pub fn push(&mut self, token: Token) {
        self.tokens.push(token);
    }
}

/// Lays out `z_L, …, z_1, z_0, w`.
pub fn tokenize(inst: &TaskInstance) -> Prompt {
    let p = &inst.params;
    let mut tokens = Vec::with_capacity(p.prompt_len());
    let mut blocks = BTreeMap::new();
    for ell in (1..=p.l).rev() {
        let start = tokens.len();
        for (t, &v) in inst.table(ell).iter().enumerate() {
            tokens.push(Token {
                block: ell as i32,
                index: t as u64 + 1,
                value: v,
            });
        }
        blocks.insert(ell as i32, BlockRange { start, end: tokens.len() });
    }
    let start = tokens.len();
    tokens.push(Token {
        block: START_BLOCK,
        index: 1,
        value: inst.z0,
    });
    blocks.insert(START_BLOCK, BlockRange { start, end: start + 1 });
    tokens.push(Token {
        block: QUERY_BLOCK,
        index: 1,
        value: inst.packed_query(),
    });
    blocks.insert(QUERY_BLOCK, BlockRange { start: start + 1, end: start + 2 });
    Prompt {
        format_version: FORMAT_VERSION,
        tokens,
        blocks,
    }
}

/// Rebuilds the instance a prompt was made from.
pub fn parse_prompt(prompt: &Prompt, params: &TaskParams) -> Result<TaskInstance> {
    let mut problems = Vec::new();
    let mut z = Vec::with_capacity(params.l);
    for ell in 1..=params.l {
        match prompt.block(ell as i32) {
            Some(r) => z.push(prompt.tokens[r].iter().map(|t| t.value).collect()),
            None => {
                problems.push(format!("missing block {ell}"));
                z.push(Vec::new());
            }
        }
    }
    let single = |b: i32, problems: &mut Vec<String>| match prompt.block(b) {
        Some(r) if r.len() == 1 => prompt.tokens[r.start].value,
        _ => {
            problems.push(format!("block {b} must hold exactly one token"));
            0
        }
    };
    let z0 = single(START_BLOCK, &mut problems);
    let packed = single(QUERY_BLOCK, &mut problems);
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let w = unpack_query(packed, &params.n)?;
    TaskInstance::new(params.clone(), z0, z, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: usize, m: u64, n: &[u64]) -> TaskParams {
        TaskParams::new(l, m, n.to_vec()).unwrap()
    }

    #[test]
    fn pair_examples() {
        assert_eq!(pair(1, 1, 3, 5).unwrap(), 1);
        assert_eq!(pair(2, 3, 3, 5).unwrap(), 8);
        assert_eq!(pair(3, 5, 3, 5).unwrap(), 15);
        assert!(matches!(pair(0, 1, 3, 5), Err(Error::Range { .. })));
        assert!(matches!(pair(1, 6, 3, 5), Err(Error::Range { .. })));
    }

    #[test]
    fn l1_hand_example() {
        let inst = TaskInstance::new(params(1, 2, &[]), 2, vec![vec![2, 1]], vec![]).unwrap();
        assert_eq!(evaluate(&inst).unwrap().i, vec![2, 1]);
    }

    #[test]
    fn l2_hand_example() {
        let inst = TaskInstance::new(
            params(2, 2, &[2]),
            1,
            vec![vec![2, 2], vec![1, 2, 3, 4]],
            vec![2],
        )
        .unwrap();
        let chain = evaluate(&inst).unwrap();
        assert_eq!(chain.i, vec![1, 2, 4]);
        assert_eq!(chain.answer(), 4);
    }

    #[test]
    fn validation_lists_every_violation() {
        let inst = TaskInstance {
            format_version: FORMAT_VERSION,
            params: params(2, 2, &[2]),
            z0: 3,
            z: vec![vec![0, 2], vec![1, 2, 9]],
            w: vec![5],
        };
        match inst.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layout_sizes() {
        let p1 = params(1, 2, &[]);
        let prompt = tokenize(&generate(&p1, 1));
        assert_eq!(prompt.len(), 4);
        assert_eq!(prompt.tokens[3].value, 0);
        let p2 = params(2, 2, &[2]);
        let prompt = tokenize(&generate(&p2, 1));
        assert_eq!(prompt.len(), 8);
        assert_eq!(prompt.block(QUERY_BLOCK), Some(7..8));
        assert_eq!(prompt.block(2), Some(0..4));
        assert_eq!(prompt.block(1), Some(4..6));
    }

    #[test]
    fn seeds_matter() {
        let p = params(2, 3, &[2]);
        let base = generate(&p, 7);
        assert_eq!(base, generate(&p, 7));
        assert!((8..24).any(|s| generate(&p, s) != base));
    }

    #[test]
    fn query_packing_round_trips() {
        let n = [2, 3, 4];
        for packed in 1..=24 {
            let w = unpack_query(packed, &n).unwrap();
            assert_eq!(pack_query(&w, &n), packed);
        }
        assert_eq!(unpack_query(0, &[]).unwrap(), Vec::<u64>::new());
    }

    #[test]
    fn enumeration_covers_count() {
        let p = params(1, 2, &[]);
        assert_eq!(p.instance_count(), Some(8));
        let all: Vec<_> = (0..8).map(|k| instance_at(&p, k)).collect();
        for (a, inst) in all.iter().enumerate() {
            inst.validate().unwrap();
            for other in &all[a + 1..] {
                assert_ne!(inst, other);
            }
        }
    }
}
