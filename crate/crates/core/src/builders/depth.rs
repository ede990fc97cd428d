//! Causal decoder with `L + 1` layers and a single head.
//!
//! Every position carries its own key and a target key. Table and start
//! positions target themselves, so attention hands them back their own
//! state and the layer program restores it by rounding. The query position
//! keeps the target of the next chain hop. Its own key is set equal to that
//! target, so its attention row splits evenly between itself and the match:
//! the `mark` slot (1 only at the query) comes back as 1/2 and tells the
//! program how to separate its own state from the retrieved value.

use serde::{Deserialize, Serialize};

use super::{
    check_task_token, clamp_index, copy_slots, largest_carried, put_bits, read_bits, retrieval_head, KeyEncoding,
    RetrievalSlots, SolverReport, DEFAULT_FORMAT,
};
use crate::engine::{div_round, round_to_int, Embedder, Layer, Mask, MlpProgram, Readout, TransformerSpec, SPEC_FORMAT_VERSION};
use crate::numerics::{FixedFormat, QuantCtx};
use crate::params::ModelDims;
use crate::task::{pair, unpack_query, TaskParams, Token};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthLayout {
    pub params: TaskParams,
    pub keys: KeyEncoding,
    pub one: usize,
    pub key: usize,
    pub target: usize,
    pub value: usize,
    pub mark: usize,
    /// Latest chain element known at the query position.
    pub current: usize,
    /// First of `L - 1` slots holding the query components.
    pub query: usize,
    pub answer: usize,
    pub width: usize,
}

impl DepthLayout {
    pub fn new(params: &TaskParams) -> Self {
        let keys = KeyEncoding::new(params.l as i32, params.max_domain());
        let dk = keys.width();
        let one = 0;
        let key = 1;
        let target = key + dk;
        let value = target + dk;
        let mark = value + 1;
        let current = mark + 1;
        let query = current + 1;
        let answer = query + params.l - 1;
        Self {
            params: params.clone(),
            keys,
            one,
            key,
            target,
            value,
            mark,
            current,
            query,
            answer,
            width: answer + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthEmbed {
    pub layout: DepthLayout,
}

impl DepthEmbed {
    pub fn embed(&self, t: &Token, position: usize, fmt: FixedFormat, _ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        let lay = &self.layout;
        check_task_token(&lay.params, t, position)?;
        let one = 1i64 << fmt.frac_bits;
        let mut x = vec![0i64; lay.width];
        x[lay.one] = one;
        let own = if t.block == -1 {
            lay.keys.encode(0, 1)
        } else {
            lay.keys.encode(t.block, t.index)
        };
        put_bits(&mut x, lay.key, &own, fmt);
        put_bits(&mut x, lay.target, &own, fmt);
        if t.block == -1 {
            x[lay.mark] = one;
            let w = unpack_query(t.value, &lay.params.n)?;
            for (k, &wc) in w.iter().enumerate() {
                x[lay.query + k] = fmt.raw_of_int(wc as i64)?;
            }
        } else {
            x[lay.value] = fmt.raw_of_int(t.value as i64)?;
        }
        Ok(x)
    }
}

/// Layer program for hop `layer` (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthMlp {
    pub layout: DepthLayout,
    pub layer: usize,
}

impl DepthMlp {
    pub fn apply(&self, y: &[i64], fmt: FixedFormat, _ctx: &mut QuantCtx) -> Vec<i64> {
        let lay = &self.layout;
        let p = &lay.params;
        let dk = lay.keys.width();
        let one = 1i64 << fmt.frac_bits;
        let mut x = vec![0i64; lay.width];
        x[lay.one] = one;
        let mark = y[lay.mark];
        if mark < one / 4 {
            let own = read_bits(y, lay.key, dk, fmt);
            put_bits(&mut x, lay.key, &own, fmt);
            put_bits(&mut x, lay.target, &own, fmt);
            x[lay.value] = round_to_int(y[lay.value], fmt) << fmt.frac_bits;
            return x;
        }
        // Query position: half of the row is itself, the rest its match.
        let rest = (one - mark).max(1);
        let retrieved = div_round(y[lay.value], rest).unwrap_or(0);
        let w: Vec<i64> = (0..p.l - 1)
            .map(|k| div_round(y[lay.query + k], mark).unwrap_or(0))
            .collect();
        x[lay.mark] = one;
        for (k, &wc) in w.iter().enumerate() {
            x[lay.query + k] = wc << fmt.frac_bits;
        }
        x[lay.current] = retrieved << fmt.frac_bits;
        let k = self.layer;
        let next = if k == 1 {
            Some(lay.keys.encode(1, clamp_index(retrieved, p.m)))
        } else if k <= p.l {
            // `retrieved` is i_{k-1}; hop to z_k(pair(w_{k-1}, i_{k-1})).
            let ell = k - 1;
            let n_ell = p.query_size(ell);
            let prev = p.domain(ell - 1);
            let wc = clamp_index(w[ell - 1], n_ell);
            let i = clamp_index(retrieved, prev);
            let idx = pair(wc, i, n_ell, prev).unwrap_or(1);
            Some(lay.keys.encode(k as i32, idx))
        } else {
            x[lay.answer] = retrieved << fmt.frac_bits;
            None
        };
        let next = next.unwrap_or_else(|| lay.keys.encode(0, 1));
        put_bits(&mut x, lay.key, &next, fmt);
        put_bits(&mut x, lay.target, &next, fmt);
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSolver {
    pub spec: TransformerSpec,
    pub report: SolverReport,
}

pub fn build_depth_solver(params: &TaskParams, fmt: Option<FixedFormat>) -> Result<DepthSolver> {
    let fmt = fmt.unwrap_or(DEFAULT_FORMAT);
    fmt.validate()?;
    let lay = DepthLayout::new(params);
    let margin = super::choose_scale(params.prompt_len(), largest_carried(params), 2, fmt)?;
    let dk = lay.keys.width();
    let slots = RetrievalSlots {
        one: lay.one,
        key: lay.key,
        target: lay.target,
        bits: 0..dk,
        values: copy_slots(lay.width),
    };
    let d = lay.width;
    let head = retrieval_head(&slots, margin.scale_raw, d, lay.width, fmt)?;
    let layers = (1..=params.l + 1)
        .map(|k| {
            Layer::new(
                vec![head.clone()],
                MlpProgram::DepthSolver(DepthMlp {
                    layout: lay.clone(),
                    layer: k,
                }),
            )
        })
        .collect::<Vec<_>>();
    let spec = TransformerSpec {
        format_version: SPEC_FORMAT_VERSION,
        dims: ModelDims::new(1, d as u64, fmt.p() as u64, layers.len() as u64)?,
        format: fmt,
        mask: Mask::Causal,
        embed: Embedder::DepthSolver(DepthEmbed { layout: lay.clone() }),
        layers,
        readout: Readout::Slot { slot: lay.answer },
    };
    spec.validate()?;
    let report = SolverReport {
        solver: "depth".into(),
        layers: spec.layers.len(),
        heads: 1,
        head_dim: d,
        width: lay.width,
        key_bits: dk,
        cot_steps: None,
        margin,
    };
    Ok(DepthSolver { spec, report })
}
