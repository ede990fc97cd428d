//! Fixed-precision transformer evaluation.
//!
//! Layer `ℓ` maps the stored vectors `x^(ℓ-1)` to
//! `y_i = concat_h Σ_j α_ij V x_j` and then `x^(ℓ)_i = g(y_i)`, where `α` is
//! the softmax of the scores `(Q x_i)·(K x_j)` over `j ≤ i` (causal mask)
//! or all `j` (full mask). There is no separate residual stream: anything
//! a position must keep has to travel through attention and the MLP, as in
//! the model being studied.
//!
//! Attention is computed exactly (see [`attention`]) and rounded once per
//! entry when stored. Parameters may be overridden per position.

pub mod attention;
mod embed;
mod matrix;
mod mlp;
pub mod random;
mod readout;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embed::{AffineEmbed, Embedder, PositionalEmbed};
pub use matrix::Matrix;
pub use mlp::{div_round, round_to_int, store_int, MlpProgram};
pub use readout::{Answer, Decoder, Readout};

use crate::numerics::{Dyadic, FixedFormat, QuantCtx};
use crate::params::ModelDims;
use crate::task::{Prompt, Token};
use crate::{Error, Result};

/// Version tag written into serialized specs.
pub const SPEC_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mask {
    Causal,
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadParams {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl HeadParams {
    pub fn zeros(d: usize, width: usize) -> Self {
        Self {
            q: Matrix::zeros(d, width),
            k: Matrix::zeros(d, width),
            v: Matrix::zeros(d, width),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionHead {
    #[serde(flatten)]
    pub base: HeadParams,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<usize, HeadParams>,
}

impl AttentionHead {
    pub fn new(base: HeadParams) -> Self {
        Self {
            base,
            overrides: BTreeMap::new(),
        }
    }

    /// Parameters in force at `position`.
    pub fn at(&self, position: usize) -> &HeadParams {
        self.overrides.get(&position).unwrap_or(&self.base)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub heads: Vec<AttentionHead>,
    pub mlp: MlpProgram,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", rename = "mlpOverrides")]
    pub mlp_overrides: BTreeMap<usize, MlpProgram>,
}

impl Layer {
    pub fn new(heads: Vec<AttentionHead>, mlp: MlpProgram) -> Self {
        Self {
            heads,
            mlp,
            mlp_overrides: BTreeMap::new(),
        }
    }

    pub fn mlp_at(&self, position: usize) -> &MlpProgram {
        self.mlp_overrides.get(&position).unwrap_or(&self.mlp)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    #[serde(rename = "formatVersion")]
    pub format_version: u32,
    pub dims: ModelDims,
    pub format: FixedFormat,
    pub mask: Mask,
    pub embed: Embedder,
    pub layers: Vec<Layer>,
    pub readout: Readout,
}

impl TransformerSpec {
    /// Per-head dimension `d`.
    pub fn head_dim(&self) -> usize {
        self.dims.d as usize
    }

    /// Embedding width `d·H`.
    pub fn width(&self) -> usize {
        (self.dims.d * self.dims.h) as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.format.validate()?;
        let mut problems = Vec::new();
        if self.format_version != SPEC_FORMAT_VERSION {
            problems.push(format!("format version {} is not {SPEC_FORMAT_VERSION}", self.format_version));
        }
        if self.dims.p != self.format.p() as u64 {
            problems.push(format!(
                "dims.p = {} but the fixed-point format has {} bits",
                self.dims.p,
                self.format.p()
            ));
        }
        if self.layers.len() as u64 != self.dims.l {
            problems.push(format!("{} layers but dims.L = {}", self.layers.len(), self.dims.l));
        }
        let shape = (self.head_dim(), self.width());
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.heads.len() as u64 != self.dims.h {
                problems.push(format!(
                    "layer {} has {} heads, expected {}",
                    l + 1,
                    layer.heads.len(),
                    self.dims.h
                ));
            }
            for (h, head) in layer.heads.iter().enumerate() {
                let all = std::iter::once((None, &head.base))
                    .chain(head.overrides.iter().map(|(p, hp)| (Some(*p), hp)));
                for (pos, hp) in all {
                    for (name, m) in [("Q", &hp.q), ("K", &hp.k), ("V", &hp.v)] {
                        if m.shape() != shape {
                            problems.push(format!(
                                "layer {} head {} {name}{} has shape {:?}, expected {shape:?}",
                                l + 1,
                                h + 1,
                                pos.map(|p| format!(" (position {p})")).unwrap_or_default(),
                                m.shape()
                            ));
                        }
                    }
                }
            }
            for program in std::iter::once(&layer.mlp).chain(layer.mlp_overrides.values()) {
                if let Err(e) = program.check_width(self.width()) {
                    problems.push(format!("layer {} MLP: {e}", l + 1));
                }
            }
        }
        if let Some(w) = self.embed.width() {
            if w != self.width() {
                problems.push(format!("embedder produces width {w}, expected {}", self.width()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(problems.join("; ")))
        }
    }

    /// Applies the readout to the last position of a forward pass.
    pub fn answer(&self, acts: &Activations) -> Result<Answer> {
        let last = acts.final_vector().ok_or(Error::Empty("activations"))?;
        self.readout.read(last, self.format)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Record scores and attention weights.
    pub trace: bool,
    /// Evaluate the positions of a layer on the rayon pool.
    pub parallel: bool,
}

/// Scores and weights of one attention row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowTrace {
    /// First attended position.
    pub start: usize,
    pub scores: Vec<Dyadic>,
    /// Weights rounded to `f64` for display; the engine itself uses the
    /// exact ratios.
    pub weights: Vec<f64>,
}

impl RowTrace {
    /// Largest score minus the largest score strictly below it, if any.
    pub fn top_gap(&self) -> Option<Dyadic> {
        let top = self.scores.iter().max()?;
        let below = self.scores.iter().filter(|s| *s < top).max()?;
        Some(top - below)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Activations {
    /// `x[ℓ][i]` for `ℓ ∈ [0, L]`, raw mantissas.
    pub x: Vec<Vec<Vec<i64>>>,
    /// `y[ℓ-1][i]` for `ℓ ∈ [1, L]`.
    pub y: Vec<Vec<Vec<i64>>>,
    /// `trace[ℓ-1][h][i]` when tracing is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Vec<Vec<RowTrace>>>>,
    /// Number of stores that saturated.
    pub saturations: u64,
}

impl Activations {
    pub fn final_vector(&self) -> Option<&[i64]> {
        self.x.last().and_then(|l| l.last()).map(Vec::as_slice)
    }
}

pub fn forward(spec: &TransformerSpec, prompt: &Prompt) -> Result<Activations> {
    forward_with(spec, &prompt.tokens, EvalOptions::default())
}

/// Embeds every token of the prompt.
pub fn embed_tokens(spec: &TransformerSpec, tokens: &[Token], ctx: &mut QuantCtx) -> Result<Vec<Vec<i64>>> {
    tokens
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            let v = spec.embed.embed(t, pos, spec.format, ctx)?;
            if v.len() != spec.width() {
                return Err(Error::Spec(format!(
                    "embedder produced width {} at position {pos}, expected {}",
                    v.len(),
                    spec.width()
                )));
            }
            Ok(v)
        })
        .collect()
}

struct PositionOutput {
    y: Vec<i64>,
    x: Vec<i64>,
    rows: Vec<RowTrace>,
    saturations: u64,
}

fn eval_position(
    spec: &TransformerSpec,
    layer: &Layer,
    proj: &[attention::Projections],
    i: usize,
    n: usize,
    trace: bool,
) -> Result<PositionOutput> {
    let fmt = spec.format;
    let d = spec.head_dim();
    let mut ctx = QuantCtx::default();
    let mut y = Vec::with_capacity(spec.width());
    let mut rows = Vec::new();
    for p in proj {
        let range = attention::row_range(spec.mask, i, n);
        let mut sums = attention::PartialSums::new(d);
        let mut scores = Vec::new();
        for j in range.clone() {
            let s = sums.add(&p.q[i], &p.k[j], &p.v[j], fmt)?;
            if trace {
                scores.push(s);
            }
        }
        y.extend(sums.output(fmt, &mut ctx));
        if trace {
            rows.push(row_trace(range.start, &scores, fmt)?);
        }
    }
    let x = layer.mlp_at(i).apply(&y, i, fmt, &mut ctx)?;
    if x.len() != spec.width() {
        return Err(Error::Spec(format!(
            "MLP produced width {} at position {i}, expected {}",
            x.len(),
            spec.width()
        )));
    }
    Ok(PositionOutput {
        y,
        x,
        rows,
        saturations: ctx.saturations,
    })
}

fn row_trace(start: usize, scores: &[i128], fmt: FixedFormat) -> Result<RowTrace> {
    use num_traits::ToPrimitive;
    let exps = scores
        .iter()
        .map(|&s| attention::weight_of(s, fmt))
        .collect::<Result<Vec<_>>>()?;
    let total: Dyadic = exps.iter().sum();
    let weights = exps
        .iter()
        .map(|e| (e.to_rational() / total.to_rational()).to_f64().unwrap_or(f64::NAN))
        .collect();
    Ok(RowTrace {
        start,
        scores: scores
            .iter()
            .map(|&s| Dyadic::from_scaled(s, 4 * fmt.frac_bits))
            .collect(),
        weights,
    })
}

/// Runs the network on raw tokens.
pub fn forward_with(spec: &TransformerSpec, tokens: &[Token], opts: EvalOptions) -> Result<Activations> {
    spec.validate()?;
    if tokens.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let n = tokens.len();
    let mut ctx = QuantCtx::default();
    let x0 = embed_tokens(spec, tokens, &mut ctx)?;
    let mut acts = Activations {
        x: vec![x0],
        y: Vec::new(),
        trace: opts.trace.then(Vec::new),
        saturations: ctx.saturations,
    };
    for layer in &spec.layers {
        let prev = acts.x.last().unwrap();
        let proj = layer
            .heads
            .iter()
            .map(|h| attention::project(h, prev))
            .collect::<Result<Vec<_>>>()?;
        let run = |i: usize| eval_position(spec, layer, &proj, i, n, opts.trace);
        let outs: Vec<PositionOutput> = if opts.parallel {
            (0..n).into_par_iter().map(run).collect::<Result<_>>()?
        } else {
            (0..n).map(run).collect::<Result<_>>()?
        };
        let mut ys = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        let mut per_head: Vec<Vec<RowTrace>> = vec![Vec::with_capacity(n); layer.heads.len()];
        for out in outs {
            acts.saturations += out.saturations;
            ys.push(out.y);
            xs.push(out.x);
            for (h, row) in out.rows.into_iter().enumerate() {
                per_head[h].push(row);
            }
        }
        if let Some(t) = acts.trace.as_mut() {
            t.push(per_head);
        }
        acts.y.push(ys);
        acts.x.push(xs);
    }
    Ok(acts)
}

/// Autoregressive loop: run, decode the last position, append, repeat.
/// Returns the appended tokens.
pub fn generate_with_cot(
    spec: &TransformerSpec,
    prompt: &Prompt,
    steps: usize,
    decode: &Decoder,
) -> Result<Vec<Token>> {
    let mut tokens = prompt.tokens.clone();
    let mut out = Vec::with_capacity(steps);
    for step in 1..=steps {
        let acts = forward_with(spec, &tokens, EvalOptions::default())?;
        let last = acts.final_vector().ok_or(Error::Empty("activations"))?;
        let tok = decode.decode(last, step, spec.format).map_err(|e| match e {
            Error::Decode { .. } => e,
            other => Error::Decode {
                step,
                reason: other.to_string(),
            },
        })?;
        tokens.push(tok);
        out.push(tok);
    }
    Ok(out)
}
