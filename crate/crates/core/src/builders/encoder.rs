//! Full-mask encoder that resolves the chain by pointer doubling.
//!
//! The first layer gives every position a pointer to the key of its
//! successor on the chain: the query points at the start token, the start
//! token at `z_1(z_0)`, an entry of `z_ℓ` holding `v` at
//! `z_{ℓ+1}(pair(w_ℓ, v))`, and entries of `z_L` at themselves. Each
//! doubling layer replaces a pointer by the pointer stored at its target,
//! so after `j` of them the query points `2^j` hops ahead. Once `2^j ≥ L + 1`
//! the query points at the `z_L` entry holding the answer and a final layer
//! reads it. Depth is `⌈log2(L + 1)⌉ + 2`.
//!
//! Head 0 attends to the position itself (restoring its state); head 1
//! follows the pointer.

use serde::{Deserialize, Serialize};

use super::{
    check_task_token, clamp_index, copy_slots, largest_carried, put_bits, read_bits, retrieval_head, KeyEncoding,
    RetrievalSlots, SolverReport, DEFAULT_FORMAT,
};
use crate::engine::{round_to_int, Embedder, Layer, Mask, MlpProgram, Readout, TransformerSpec, SPEC_FORMAT_VERSION};
use crate::numerics::{FixedFormat, QuantCtx};
use crate::params::ModelDims;
use crate::task::{pair, unpack_query, TaskParams, Token};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayout {
    pub params: TaskParams,
    pub keys: KeyEncoding,
    #[serde(rename = "headDim")]
    pub head_dim: usize,
    pub one: usize,
    pub key: usize,
    pub pointer: usize,
    pub block: usize,
    pub index: usize,
    pub value: usize,
    pub packed: usize,
    pub answer: usize,
    pub width: usize,
}

impl EncoderLayout {
    pub fn new(params: &TaskParams) -> Self {
        let keys = KeyEncoding::new(params.l as i32, params.max_domain());
        let dk = keys.width();
        let one = 0;
        let key = 1;
        let pointer = key + dk;
        let block = pointer + dk;
        let index = block + 1;
        let value = index + 1;
        let packed = value + 1;
        let answer = packed + 1;
        let head_dim = answer + 1;
        Self {
            params: params.clone(),
            keys,
            head_dim,
            one,
            key,
            pointer,
            block,
            index,
            value,
            packed,
            answer,
            width: 2 * head_dim,
        }
    }

    /// Rows of the pointer head's output.
    fn fetched_value(&self) -> usize {
        self.keys.width()
    }

    /// Number of doubling layers.
    pub fn doublings(&self) -> usize {
        let hops = self.params.l as u64 + 1;
        (64 - (hops - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderEmbed {
    pub layout: EncoderLayout,
}

impl EncoderEmbed {
    pub fn embed(&self, t: &Token, position: usize, fmt: FixedFormat, _ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        let lay = &self.layout;
        check_task_token(&lay.params, t, position)?;
        let mut x = vec![0i64; lay.width];
        x[lay.one] = 1i64 << fmt.frac_bits;
        put_bits(&mut x, lay.key, &lay.keys.encode(t.block, t.index), fmt);
        // Every position starts by looking at the query token.
        put_bits(&mut x, lay.pointer, &lay.keys.encode(-1, 1), fmt);
        x[lay.block] = fmt.raw_of_int(t.block as i64)?;
        x[lay.index] = fmt.raw_of_int(t.index as i64)?;
        x[lay.value] = fmt.raw_of_int(t.value as i64)?;
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EncoderStage {
    /// Learn the query and point at the successor.
    Successor,
    /// Jump to the target's pointer.
    Double,
    /// Read the value at the target.
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderMlp {
    pub layout: EncoderLayout,
    pub stage: EncoderStage,
}

impl EncoderMlp {
    pub fn apply(&self, y: &[i64], fmt: FixedFormat, _ctx: &mut QuantCtx) -> Vec<i64> {
        let lay = &self.layout;
        let p = &lay.params;
        let dk = lay.keys.width();
        let fetched = &y[lay.head_dim..];
        let int = |raw: i64| round_to_int(raw, fmt);
        let mut x = vec![0i64; lay.width];
        x[lay.one] = 1i64 << fmt.frac_bits;
        put_bits(&mut x, lay.key, &read_bits(y, lay.key, dk, fmt), fmt);
        for slot in [lay.block, lay.index, lay.value, lay.packed, lay.answer] {
            x[slot] = int(y[slot]) << fmt.frac_bits;
        }
        let ptr = match self.stage {
            EncoderStage::Successor => {
                // The pointer still targets the query token, whose value is
                // the packed query.
                let packed = int(fetched[lay.fetched_value()]).max(0);
                x[lay.packed] = packed << fmt.frac_bits;
                let block = int(y[lay.block]);
                let index = int(y[lay.index]).max(1) as u64;
                let value = int(y[lay.value]);
                match block {
                    b if b < 0 => lay.keys.encode(0, 1),
                    0 => lay.keys.encode(1, clamp_index(value, p.m)),
                    b if (b as usize) < p.l => {
                        let ell = b as usize;
                        let n_ell = p.query_size(ell);
                        let prev = p.domain(ell - 1);
                        let w = unpack_query(clamp_index(packed, p.query_count()), &p.n).unwrap_or_default();
                        let wc = w.get(ell - 1).copied().unwrap_or(1);
                        let idx = pair(wc, clamp_index(value, prev), n_ell, prev).unwrap_or(1);
                        lay.keys.encode(b as i32 + 1, idx)
                    }
                    b => lay.keys.encode(b as i32, index),
                }
            }
            EncoderStage::Double => read_bits(fetched, 0, dk, fmt),
            EncoderStage::Read => {
                x[lay.answer] = int(fetched[lay.fetched_value()]) << fmt.frac_bits;
                read_bits(y, lay.pointer, dk, fmt)
            }
        };
        put_bits(&mut x, lay.pointer, &ptr, fmt);
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSolver {
    pub spec: TransformerSpec,
    pub report: SolverReport,
}

pub fn build_encoder_solver(params: &TaskParams, fmt: Option<FixedFormat>) -> Result<EncoderSolver> {
    let fmt = fmt.unwrap_or(DEFAULT_FORMAT);
    fmt.validate()?;
    let lay = EncoderLayout::new(params);
    let margin = super::choose_scale(params.prompt_len(), largest_carried(params), 1, fmt)?;
    let dk = lay.keys.width();
    let d = lay.head_dim;
    let own = RetrievalSlots {
        one: lay.one,
        key: lay.key,
        target: lay.key,
        bits: 0..dk,
        values: copy_slots(d),
    };
    let mut follow_values: Vec<(usize, usize)> = (0..dk).map(|b| (lay.pointer + b, b)).collect();
    follow_values.push((lay.value, lay.fetched_value()));
    let follow = RetrievalSlots {
        target: lay.pointer,
        values: follow_values,
        ..own.clone()
    };
    let heads = vec![
        retrieval_head(&own, margin.scale_raw, d, lay.width, fmt)?,
        retrieval_head(&follow, margin.scale_raw, d, lay.width, fmt)?,
    ];
    let mut stages = vec![EncoderStage::Successor];
    stages.extend(std::iter::repeat_n(EncoderStage::Double, lay.doublings()));
    stages.push(EncoderStage::Read);
    let layers: Vec<Layer> = stages
        .into_iter()
        .map(|stage| {
            Layer::new(
                heads.clone(),
                MlpProgram::EncoderSolver(EncoderMlp {
                    layout: lay.clone(),
                    stage,
                }),
            )
        })
        .collect();
    let spec = TransformerSpec {
        format_version: SPEC_FORMAT_VERSION,
        dims: ModelDims::new(2, d as u64, fmt.p() as u64, layers.len() as u64)?,
        format: fmt,
        mask: Mask::Full,
        embed: Embedder::EncoderSolver(EncoderEmbed { layout: lay.clone() }),
        layers,
        readout: Readout::Slot { slot: lay.answer },
    };
    spec.validate()?;
    let report = SolverReport {
        solver: "encoder".into(),
        layers: spec.layers.len(),
        heads: 2,
        head_dim: d,
        width: lay.width,
        key_bits: dk,
        cot_steps: None,
        margin,
    };
    Ok(EncoderSolver { spec, report })
}
