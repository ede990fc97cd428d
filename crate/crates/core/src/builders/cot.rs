//! One-layer causal decoder that writes the chain out as generated tokens.
//!
//! With `H = L + 1` heads:
//!
//! - head 0 reads the position's bookkeeping (step counter, packed query).
//!   At the query token its key equals the start token's key, so the row
//!   splits between the two and also yields `z_0`;
//! - head 1 averages every `z_1` entry, each placed in its own slot, so the
//!   whole first table is visible at once (this needs head dimension `m`);
//! - head `h ≥ 2` fetches `z_h` at the target carried by generated token
//!   `h - 1`.
//!
//! Generated token `s` lives in block `L + 1` with index `s` and value
//! `(i_s - 1)·Q + q`, where `q` is the packed query and `Q` the number of
//! packed queries. Carrying `q` forward lets each step compute its own
//! next target. After `L` steps the last token holds the answer `i_L`.

use serde::{Deserialize, Serialize};

use super::{
    check_task_token, clamp_index, largest_carried, put_bits, retrieval_head, KeyEncoding, RetrievalSlots,
    SolverReport, DEFAULT_FORMAT,
};
use crate::engine::{
    div_round, round_to_int, Decoder, Embedder, Layer, Mask, MlpProgram, Readout, TransformerSpec, SPEC_FORMAT_VERSION,
};
use crate::numerics::{FixedFormat, QuantCtx};
use crate::params::ModelDims;
use crate::task::{pair, unpack_query, TaskParams, Token};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotLayout {
    pub params: TaskParams,
    pub keys: KeyEncoding,
    pub heads: usize,
    #[serde(rename = "headDim")]
    pub head_dim: usize,
    pub one: usize,
    pub key: usize,
    /// One target key per head, `heads · D` slots.
    pub targets: usize,
    pub value: usize,
    pub mark: usize,
    pub step: usize,
    pub packed: usize,
    /// `m` slots; a `z_1` entry writes its value into its own slot.
    pub broadcast: usize,
    pub answer: usize,
    pub width: usize,
}

impl CotLayout {
    pub fn new(params: &TaskParams) -> Self {
        let l = params.l;
        let keys = KeyEncoding::new(l as i32 + 1, params.max_domain().max(l as u64));
        let dk = keys.width();
        let heads = l + 1;
        let one = 0;
        let key = 1;
        let targets = key + dk;
        let value = targets + heads * dk;
        let mark = value + 1;
        let step = mark + 1;
        let packed = step + 1;
        let broadcast = packed + 1;
        let answer = broadcast + params.m as usize;
        let slots = answer + 1;
        let head_dim = (2 * dk).max(params.m as usize).max(4).max(slots.div_ceil(heads));
        Self {
            params: params.clone(),
            keys,
            heads,
            head_dim,
            one,
            key,
            targets,
            value,
            mark,
            step,
            packed,
            broadcast,
            answer,
            width: heads * head_dim,
        }
    }

    fn target(&self, head: usize) -> usize {
        self.targets + head * self.keys.width()
    }

    /// Block of the generated tokens.
    pub fn cot_block(&self) -> i32 {
        self.params.l as i32 + 1
    }

    /// Value of generated token carrying chain element `i` and packed
    /// query `q` (`q = 1` when there is no query).
    pub fn cot_value(&self, i: u64, q: u64) -> u64 {
        (i - 1) * self.params.query_count() + q
    }

    /// Inverse of [`CotLayout::cot_value`]: `(i, q)`.
    pub fn split_cot_value(&self, v: u64) -> (u64, u64) {
        let qc = self.params.query_count();
        ((v - 1) / qc + 1, (v - 1) % qc + 1)
    }

    fn query_of(&self, q: u64) -> Result<Vec<u64>> {
        if self.params.l == 1 {
            Ok(Vec::new())
        } else {
            unpack_query(q, &self.params.n)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotEmbed {
    pub layout: CotLayout,
}

impl CotEmbed {
    pub fn embed(&self, t: &Token, position: usize, fmt: FixedFormat, _ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        let lay = &self.layout;
        let p = &lay.params;
        let one = 1i64 << fmt.frac_bits;
        let mut x = vec![0i64; lay.width];
        x[lay.one] = one;
        let own = if t.block == -1 {
            lay.keys.encode(0, 1)
        } else {
            lay.keys.encode(t.block, t.index)
        };
        put_bits(&mut x, lay.key, &own, fmt);
        for h in 0..lay.heads {
            put_bits(&mut x, lay.target(h), &own, fmt);
        }
        if t.block == lay.cot_block() {
            let s = t.index;
            let bad = |reason: String| Error::Vocabulary { position, reason };
            if s == 0 || s > p.l as u64 {
                return Err(bad(format!("generated token index {s} outside [1, {}]", p.l)));
            }
            let size = p.domain(s as usize - 1);
            if t.value == 0 || t.value > size * p.query_count() {
                return Err(bad(format!("generated token value {} out of range", t.value)));
            }
            let (i, q) = lay.split_cot_value(t.value);
            if i > size {
                return Err(bad(format!("chain element {i} outside [1, {size}]")));
            }
            let w = lay.query_of(q)?;
            let s = s as usize;
            if s < p.l {
                let idx = pair(w[s - 1], i, p.query_size(s), p.domain(s - 1))?;
                put_bits(&mut x, lay.target(s + 1), &lay.keys.encode(s as i32 + 1, idx), fmt);
            }
            x[lay.mark] = one;
            x[lay.step] = fmt.raw_of_int(s as i64)?;
            x[lay.packed] = fmt.raw_of_int(q as i64)?;
            return Ok(x);
        }
        check_task_token(p, t, position)?;
        match t.block {
            -1 => {
                put_bits(&mut x, lay.target(1), &lay.keys.encode(1, 1), fmt);
                x[lay.mark] = one;
                x[lay.packed] = fmt.raw_of_int(if p.l == 1 { 1 } else { t.value as i64 })?;
            }
            b => {
                x[lay.value] = fmt.raw_of_int(t.value as i64)?;
                if b == 1 {
                    x[lay.broadcast + t.index as usize - 1] = fmt.raw_of_int(t.value as i64)?;
                }
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotMlp {
    pub layout: CotLayout,
}

impl CotMlp {
    pub fn apply(&self, y: &[i64], fmt: FixedFormat, _ctx: &mut QuantCtx) -> Vec<i64> {
        let lay = &self.layout;
        let p = &lay.params;
        let d = lay.head_dim;
        let one = 1i64 << fmt.frac_bits;
        let mut x = vec![0i64; lay.width];
        x[lay.one] = one;
        let mark = y[1];
        if mark < one / 4 {
            return x;
        }
        let step = div_round(y[2], mark).unwrap_or(0);
        let packed = div_round(y[3], mark).unwrap_or(0);
        let i = if step == 0 {
            let z0 = clamp_index(div_round(y[0], (one - mark).max(1)).unwrap_or(1), p.m);
            let avg = y[d + z0 as usize - 1] as i128 * p.m as i128;
            div_round(i64::try_from(avg).unwrap_or(i64::MAX), one).unwrap_or(0)
        } else if (step as usize) < p.l {
            round_to_int(y[(step as usize + 1) * d], fmt)
        } else {
            0
        };
        x[lay.answer] = i << fmt.frac_bits;
        x[lay.step] = step << fmt.frac_bits;
        x[lay.packed] = packed << fmt.frac_bits;
        x
    }
}

/// Turns the last position into the next generated token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotDecode {
    pub layout: CotLayout,
}

impl CotDecode {
    pub fn decode(&self, last: &[i64], step: usize, fmt: FixedFormat) -> Result<Token> {
        let lay = &self.layout;
        let p = &lay.params;
        let err = |reason: String| Error::Decode { step, reason };
        let s = round_to_int(last[lay.step], fmt);
        if s + 1 != step as i64 {
            return Err(err(format!("position reports step {s}, expected {}", step - 1)));
        }
        if step > p.l {
            return Err(err(format!("the chain has only {} elements", p.l)));
        }
        let i = round_to_int(last[lay.answer], fmt);
        let size = p.domain(step - 1);
        if i < 1 || i as u64 > size {
            return Err(err(format!("chain element {i} outside [1, {size}]")));
        }
        let q = round_to_int(last[lay.packed], fmt);
        if q < 1 || q as u64 > p.query_count() {
            return Err(err(format!("packed query {q} out of range")));
        }
        Ok(Token {
            block: lay.cot_block(),
            index: step as u64,
            value: lay.cot_value(i as u64, q as u64),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotSolver {
    pub spec: TransformerSpec,
    pub decoder: Decoder,
    pub steps: usize,
    pub report: SolverReport,
}

impl CotSolver {
    /// Chain elements `i_1..i_L` carried by generated tokens.
    pub fn chain(&self, generated: &[Token]) -> Vec<u64> {
        let Decoder::CotSolver(dec) = &self.decoder else {
            return Vec::new();
        };
        generated.iter().map(|t| dec.layout.split_cot_value(t.value).0).collect()
    }
}

pub fn build_cot_solver(params: &TaskParams, fmt: Option<FixedFormat>) -> Result<CotSolver> {
    let fmt = fmt.unwrap_or(DEFAULT_FORMAT);
    fmt.validate()?;
    let lay = CotLayout::new(params);
    let positions = params.prompt_len() + params.l;
    let margin = super::choose_scale(positions, largest_carried(params), params.m.max(2), fmt)?;
    let dk = lay.keys.width();
    let d = lay.head_dim;
    let mut heads = Vec::with_capacity(lay.heads);
    let full = |head: usize, values: Vec<(usize, usize)>| RetrievalSlots {
        one: lay.one,
        key: lay.key,
        target: lay.target(head),
        bits: 0..dk,
        values,
    };
    heads.push(retrieval_head(
        &full(0, vec![(lay.value, 0), (lay.mark, 1), (lay.step, 2), (lay.packed, 3)]),
        margin.scale_raw,
        d,
        lay.width,
        fmt,
    )?);
    let broadcast = RetrievalSlots {
        bits: 0..lay.keys.block_bits as usize,
        values: (0..params.m as usize).map(|t| (lay.broadcast + t, t)).collect(),
        ..full(1, Vec::new())
    };
    heads.push(retrieval_head(&broadcast, margin.scale_raw, d, lay.width, fmt)?);
    for h in 2..lay.heads {
        heads.push(retrieval_head(&full(h, vec![(lay.value, 0)]), margin.scale_raw, d, lay.width, fmt)?);
    }
    let layers = vec![Layer::new(heads, MlpProgram::CotSolver(CotMlp { layout: lay.clone() }))];
    let spec = TransformerSpec {
        format_version: SPEC_FORMAT_VERSION,
        dims: ModelDims::new(lay.heads as u64, d as u64, fmt.p() as u64, 1)?,
        format: fmt,
        mask: Mask::Causal,
        embed: Embedder::CotSolver(CotEmbed { layout: lay.clone() }),
        layers,
        readout: Readout::Slot { slot: lay.answer },
    };
    spec.validate()?;
    let report = SolverReport {
        solver: "cot".into(),
        layers: 1,
        heads: lay.heads,
        head_dim: d,
        width: lay.width,
        key_bits: dk,
        cot_steps: Some(params.l),
        margin,
    };
    Ok(CotSolver {
        decoder: Decoder::CotSolver(CotDecode { layout: lay }),
        spec,
        steps: params.l,
        report,
    })
}
