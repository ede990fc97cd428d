//! Compilation of a symmetric circuit to a full-mask transformer.
//!
//! Every circuit layer becomes six attention+MLP sublayers:
//!
//! 1. gather: heads retrieve input wires and the MLP sums them (a gate of
//!    fan-in above `H` is padded to `r·H` wires and summed in `r` parts at
//!    `r` positions);
//! 2. the first of those positions averages the `r` partial sums and
//!    rescales by `r`;
//! 3. every position of a spread gate fetches the total;
//! 4. and 5. a two-layer ReLU lookup, split over two sublayers, turns the
//!    count `c` into the terms `table[t]·[c = t]`;
//! 6. the terms are summed (averaged and rescaled for spread gates).
//!
//! Sublayers a position does not need are identity: one head attends to
//! the position itself and the MLP copies its state back.
//!
//! Attention keys are position codes plus a group code naming the spread
//! gate a position works for. Queries are constants per position, so all
//! positional information lives in per-position query overrides and MLP
//! biases. Retrieval is exact after rounding (see
//! [`choose_exact_scale`]), so every stored bit and count is exact.

use serde::{Deserialize, Serialize};

use super::{eval_all, SymmetricCircuit};
use crate::builders::keys::bits_for;
use crate::builders::{choose_exact_scale, MarginReport, DEFAULT_FORMAT};
use crate::engine::{
    forward_with, AttentionHead, Embedder, EvalOptions, HeadParams, Layer, Mask, Matrix, MlpProgram, PositionalEmbed,
    Readout, TransformerSpec, SPEC_FORMAT_VERSION,
};
use crate::numerics::FixedFormat;
use crate::params::ModelDims;
use crate::task::Token;
use crate::{Error, Result};

pub const SUBLAYERS: usize = 6;
const MAX_POSITIONS: usize = 1 << 16;
const ONE: usize = 0;
const POS: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Use exactly this many positions instead of the smallest that fits.
    #[serde(default)]
    pub positions: Option<usize>,
    /// Extra blocks of `H` constant-zero wires appended to every gate of
    /// fan-in above `H`.
    #[serde(rename = "extraPadding", default)]
    pub extra_padding: usize,
}

/// An activation entry: slot `slot` of position `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub position: usize,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum GatePlacement {
    /// Fan-in at most `H`: summed by a range of heads at one position.
    Small {
        wire: usize,
        layer: usize,
        #[serde(rename = "fanIn")]
        fan_in: usize,
        position: usize,
        /// Half-open head range.
        heads: [usize; 2],
        output: Location,
    },
    /// Fan-in above `H`: padded to `r·H` wires over `r` positions.
    Spread {
        wire: usize,
        layer: usize,
        #[serde(rename = "fanIn")]
        fan_in: usize,
        padded: usize,
        positions: Vec<usize>,
        output: Location,
    },
}

impl GatePlacement {
    pub fn wire(&self) -> usize {
        match self {
            GatePlacement::Small { wire, .. } | GatePlacement::Spread { wire, .. } => *wire,
        }
    }

    pub fn layer(&self) -> usize {
        match self {
            GatePlacement::Small { layer, .. } | GatePlacement::Spread { layer, .. } => *layer,
        }
    }

    /// Entry holding the gate's value after the layer's last sublayer.
    pub fn output(&self) -> Location {
        match self {
            GatePlacement::Small { output, .. } | GatePlacement::Spread { output, .. } => *output,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerUsage {
    pub layer: usize,
    #[serde(rename = "smallPositions")]
    pub small_positions: usize,
    #[serde(rename = "spreadPositions")]
    pub spread_positions: usize,
    /// `s / (H/2) + 1`.
    #[serde(rename = "smallBound")]
    pub small_bound: f64,
    /// `Σ (w/H + 1)` over the spread gates.
    #[serde(rename = "spreadBound")]
    pub spread_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub depth: usize,
    #[serde(rename = "circuitDepth")]
    pub circuit_depth: usize,
    #[serde(rename = "headsPerLayer")]
    pub heads_per_layer: usize,
    #[serde(rename = "headDim")]
    pub head_dim: usize,
    pub width: usize,
    #[serde(rename = "inputCount")]
    pub input_count: usize,
    pub wires: usize,
    /// Positions of the compiled encoder.
    pub positions: usize,
    #[serde(rename = "positionsUsed")]
    pub positions_used: Vec<LayerUsage>,
    pub packing: Vec<GatePlacement>,
    pub margin: MarginReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompiledCircuit {
    pub spec: TransformerSpec,
    pub report: CompileReport,
}

#[derive(Clone, Copy, Debug)]
struct Source {
    position: usize,
    store: usize,
}

#[derive(Clone, Debug)]
struct SmallGate {
    table: Vec<u8>,
    sources: Vec<Source>,
    first_head: usize,
    sum: usize,
    hidden: usize,
    terms: usize,
    store: usize,
}

#[derive(Clone, Debug)]
struct SpreadPart {
    table: Vec<u8>,
    r: usize,
    home: usize,
    group: u64,
    /// One entry per head; `None` is a padded wire.
    sources: Vec<Option<Source>>,
    /// Count values `t` whose terms this part computes.
    chunk: std::ops::Range<usize>,
    /// Count values with a step unit here.
    steps: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Role {
    Idle,
    Small(Vec<SmallGate>),
    Spread(SpreadPart),
}

struct Plan {
    roles: Vec<Vec<Role>>,
    groups: Vec<Vec<u64>>,
    usage: Vec<LayerUsage>,
    packing: Vec<GatePlacement>,
    store: usize,
    scratch: usize,
    max_group: u64,
    max_parts: usize,
}

enum Unit {
    Small(Vec<usize>),
    Spread(usize, usize),
}

/// Packs gate indices first-fit by decreasing fan-in into bins of load
/// at most `cap`.
fn pack(fan_ins: &[(usize, usize)], cap: usize) -> Vec<Vec<usize>> {
    let mut order = fan_ins.to_vec();
    order.sort_by_key(|&(idx, w)| (std::cmp::Reverse(w), idx));
    let mut bins: Vec<(usize, Vec<usize>)> = Vec::new();
    for (idx, w) in order {
        match bins.iter_mut().find(|(load, _)| load + w <= cap) {
            Some((load, items)) => {
                *load += w;
                items.push(idx);
            }
            None => bins.push((w, vec![idx])),
        }
    }
    bins.into_iter().map(|(_, items)| items).collect()
}

fn plan(c: &SymmetricCircuit, heads: usize, n_pos: usize, opts: &CompileOptions) -> std::result::Result<Plan, String> {
    let n = c.input_count;
    let s = c.wires();
    let total_wires = n + c.gate_count();
    let output = c.output_wire();
    let mut last_use = vec![0usize; total_wires];
    for (l, gates) in c.layers.iter().enumerate() {
        for g in gates {
            for &w in &g.inputs {
                last_use[w] = last_use[w].max(l + 1);
            }
        }
    }
    last_use[output] = usize::MAX;
    let mut holder: Vec<Vec<usize>> = (0..n_pos).map(|p| if p < n { vec![p] } else { Vec::new() }).collect();
    let mut loc: Vec<Option<Source>> = vec![None; total_wires];
    for (j, slot) in loc.iter_mut().enumerate().take(n) {
        *slot = Some(Source { position: j, store: 0 });
    }
    let mut out = Plan {
        roles: Vec::new(),
        groups: Vec::new(),
        usage: Vec::new(),
        packing: Vec::new(),
        store: 1,
        scratch: 0,
        max_group: 0,
        max_parts: 1,
    };
    let depth = c.depth();
    for (li, gates) in c.layers.iter().enumerate() {
        let ell = li + 1;
        let small: Vec<(usize, usize)> = gates
            .iter()
            .enumerate()
            .filter(|(_, g)| g.fan_in() <= heads)
            .map(|(i, g)| (i, g.fan_in()))
            .collect();
        let bins = pack(&small, heads);
        let mut units: Vec<Unit> = bins.into_iter().map(Unit::Small).collect();
        for (i, g) in gates.iter().enumerate() {
            if g.fan_in() > heads {
                units.push(Unit::Spread(i, g.fan_in().div_ceil(heads) + opts.extra_padding));
            }
        }
        let small_positions = units.iter().filter(|u| matches!(u, Unit::Small(_))).count();
        let spread_positions: usize = units
            .iter()
            .map(|u| if let Unit::Spread(_, r) = u { *r } else { 0 })
            .sum();
        if 2 * small_positions > n_pos || 2 * spread_positions > n_pos {
            return Err(format!(
                "layer {ell} needs {small_positions} small-gate and {spread_positions} spread positions, \
                 each budget is half of {n_pos} positions"
            ));
        }
        let mut free: Vec<usize> = (0..n_pos)
            .filter(|&p| holder[p].iter().all(|&w| last_use[w] <= ell))
            .collect();
        let wire_of = |i: usize| c.wire_of(ell, i);
        if ell == depth {
            // The output gate goes first and lands on the last position.
            let contains_output = |u: &Unit| match u {
                Unit::Small(items) => items.iter().any(|&i| wire_of(i) == output),
                Unit::Spread(i, _) => wire_of(*i) == output,
            };
            if let Some(k) = units.iter().position(contains_output) {
                let u = units.remove(k);
                units.insert(0, u);
            }
            free.retain(|&p| p != n_pos - 1);
            free.insert(0, n_pos - 1);
        }
        let needed = small_positions + spread_positions;
        if free.len() < needed {
            return Err(format!(
                "layer {ell} needs {needed} work positions but only {} of {n_pos} are free",
                free.len()
            ));
        }
        let mut roles: Vec<Role> = vec![Role::Idle; n_pos];
        let mut groups = vec![0u64; n_pos];
        let mut next_group = 0u64;
        let mut taken = free.into_iter();
        let mut new_holder: Vec<(usize, Vec<usize>)> = Vec::new();
        for unit in &units {
            match unit {
                Unit::Small(items) => {
                    let p = taken.next().unwrap();
                    let mut list = Vec::new();
                    let mut head = 0;
                    let mut scratch = 0;
                    for (k, &i) in items.iter().enumerate() {
                        let g = &gates[i];
                        let w = g.fan_in();
                        let sources = g.inputs.iter().map(|&src| loc[src].unwrap()).collect();
                        list.push(SmallGate {
                            table: g.table.clone(),
                            sources,
                            first_head: head,
                            sum: scratch,
                            hidden: scratch + 1,
                            terms: scratch + 1 + 2 * w,
                            store: k,
                        });
                        out.packing.push(GatePlacement::Small {
                            wire: wire_of(i),
                            layer: ell,
                            fan_in: w,
                            position: p,
                            heads: [head, head + w],
                            output: Location { position: p, slot: k },
                        });
                        head += w;
                        scratch += 1 + 2 * w + w + 1;
                    }
                    out.scratch = out.scratch.max(scratch);
                    out.store = out.store.max(items.len());
                    new_holder.push((p, items.iter().map(|&i| wire_of(i)).collect()));
                    roles[p] = Role::Small(list);
                }
                Unit::Spread(i, r) => {
                    let g = &gates[*i];
                    let w = g.fan_in();
                    next_group += 1;
                    let positions: Vec<usize> = (0..*r).map(|_| taken.next().unwrap()).collect();
                    let home = positions[0];
                    let chunk = (w + 1).div_ceil(*r);
                    for (j, &p) in positions.iter().enumerate() {
                        let sources = (0..heads)
                            .map(|h| g.inputs.get(j * heads + h).map(|&src| loc[src].unwrap()))
                            .collect();
                        let lo = (j * chunk).min(w + 1);
                        let hi = ((j + 1) * chunk).min(w + 1);
                        let steps: Vec<usize> = (lo..=hi).filter(|&t| t >= 1 && t <= w).collect();
                        out.scratch = out.scratch.max(2 * steps.len() + (hi - lo));
                        roles[p] = Role::Spread(SpreadPart {
                            table: g.table.clone(),
                            r: *r,
                            home,
                            group: next_group,
                            sources,
                            chunk: lo..hi,
                            steps,
                        });
                        groups[p] = next_group;
                        new_holder.push((p, Vec::new()));
                    }
                    new_holder.retain(|(p, _)| *p != home);
                    new_holder.push((home, vec![wire_of(*i)]));
                    out.max_parts = out.max_parts.max(*r);
                    out.packing.push(GatePlacement::Spread {
                        wire: wire_of(*i),
                        layer: ell,
                        fan_in: w,
                        padded: r * heads,
                        positions,
                        output: Location { position: home, slot: 0 },
                    });
                }
            }
        }
        for (p, wires) in new_holder {
            for (k, &w) in wires.iter().enumerate() {
                loc[w] = Some(Source { position: p, store: k });
            }
            holder[p] = wires;
        }
        out.max_group = out.max_group.max(next_group);
        let hf = heads as f64;
        out.usage.push(LayerUsage {
            layer: ell,
            small_positions,
            spread_positions,
            small_bound: s as f64 / (hf / 2.0) + 1.0,
            spread_bound: gates
                .iter()
                .filter(|g| g.fan_in() > heads)
                .map(|g| g.fan_in() as f64 / hf + 1.0)
                .fold(0.0, |a, b| a + b),
        });
        out.roles.push(roles);
        out.groups.push(groups);
    }
    Ok(out)
}

struct Slots {
    pos_bits: usize,
    grp: usize,
    grp_bits: usize,
    dynamic: usize,
    store: usize,
    part: usize,
    sum: usize,
    terms: usize,
    scratch: usize,
    dyn_count: usize,
    d: usize,
    heads: usize,
    one: i64,
}

impl Slots {
    fn width(&self) -> usize {
        self.d * self.heads
    }

    /// Index in the attention output of head `h`'s copy of `slot`.
    fn y(&self, h: usize, slot: usize) -> usize {
        h * self.d + slot - self.dynamic
    }

    /// Static entries of position `p` with group code `group`.
    fn statics(&self, p: usize, group: u64) -> Vec<i64> {
        let mut b = vec![0i64; self.width()];
        b[ONE] = self.one;
        for k in 0..self.pos_bits {
            b[POS + k] = ((p >> k) & 1) as i64 * self.one;
        }
        for k in 0..self.grp_bits {
            b[self.grp + k] = ((group >> k) & 1) as i64 * self.one;
        }
        b
    }

    fn base_head(&self) -> HeadParams {
        let mut hp = HeadParams::zeros(self.d, self.width());
        let one = self.one;
        let code_slots = (0..self.pos_bits).map(|k| POS + k).chain((0..self.grp_bits).map(|k| self.grp + k));
        for (row, slot) in code_slots.enumerate() {
            hp.k.set(2 * row, slot, one);
            hp.k.set(2 * row + 1, ONE, one);
            hp.k.set(2 * row + 1, slot, -one);
        }
        for i in 0..self.dyn_count {
            hp.v.set(i, self.dynamic + i, one);
        }
        hp
    }

    /// Query matching position code `p`, ignoring groups.
    fn query_position(&self, p: usize, scale: i64) -> Matrix {
        let mut q = Matrix::zeros(self.d, self.width());
        for k in 0..self.pos_bits {
            let bit = ((p >> k) & 1) as i64;
            q.set(2 * k, ONE, scale * bit);
            q.set(2 * k + 1, ONE, scale * (1 - bit));
        }
        q
    }

    /// Query matching group code `g`, ignoring positions.
    fn query_group(&self, g: u64, scale: i64) -> Matrix {
        let mut q = Matrix::zeros(self.d, self.width());
        for k in 0..self.grp_bits {
            let bit = ((g >> k) & 1) as i64;
            let row = 2 * (self.pos_bits + k);
            q.set(row, ONE, scale * bit);
            q.set(row + 1, ONE, scale * (1 - bit));
        }
        q
    }
}

/// `x = W·y + b` assembled entry by entry, coefficients in raw units.
struct AffineBuilder {
    weight: Matrix,
    bias: Vec<i64>,
}

impl AffineBuilder {
    fn new(width: usize, bias: Vec<i64>) -> Self {
        Self {
            weight: Matrix::zeros(width, width),
            bias,
        }
    }

    fn add(&mut self, out: usize, y: usize, raw: i64) {
        let cur = self.weight.get(out, y);
        self.weight.set(out, y, cur + raw);
    }

    fn build(self) -> MlpProgram {
        MlpProgram::Affine {
            weight: self.weight,
            bias: self.bias,
        }
    }
}

/// `x = W2·relu(W1·y + b1) + b2`.
struct ReluBuilder {
    width: usize,
    first: Vec<(Vec<(usize, i64)>, i64)>,
    second: Vec<(usize, usize, i64)>,
    bias: Vec<i64>,
}

impl ReluBuilder {
    fn new(width: usize, bias: Vec<i64>) -> Self {
        Self {
            width,
            first: Vec::new(),
            second: Vec::new(),
            bias,
        }
    }

    fn unit(&mut self, terms: Vec<(usize, i64)>, bias: i64) -> usize {
        self.first.push((terms, bias));
        self.first.len() - 1
    }

    fn out(&mut self, slot: usize, unit: usize, raw: i64) {
        self.second.push((slot, unit, raw));
    }

    /// Adds `step(c - t)`: 1 when `c ≥ t`, 0 when `c ≤ t - 1`, exact for
    /// `c` within 1/4 of an integer. `c = Σ coeff·y`.
    fn step(&mut self, slot: usize, c: &[(usize, i64)], t: usize, sign: i64, one: i64) {
        let doubled: Vec<(usize, i64)> = c.iter().map(|&(y, w)| (y, 2 * w)).collect();
        let base = -2 * t as i64 * one;
        let hi = self.unit(doubled.clone(), base + 3 * one / 2);
        let lo = self.unit(doubled, base + one / 2);
        self.out(slot, hi, sign * one);
        self.out(slot, lo, -sign * one);
    }

    /// Stores the two units of `step(c - t)` in `slot` and `slot + 1`,
    /// where `doubled = 2c` as `Σ coeff·y`.
    fn step_units(&mut self, slot: usize, doubled: &[(usize, i64)], t: usize, one: i64) {
        let base = -2 * t as i64 * one;
        let hi = self.unit(doubled.to_vec(), base + 3 * one / 2);
        let lo = self.unit(doubled.to_vec(), base + one / 2);
        self.out(slot, hi, one);
        self.out(slot + 1, lo, one);
    }

    fn build(self) -> MlpProgram {
        let hidden = self.first.len().max(1);
        let mut w1 = Matrix::zeros(hidden, self.width);
        let mut b1 = vec![0i64; hidden];
        for (u, (terms, b)) in self.first.into_iter().enumerate() {
            for (y, w) in terms {
                w1.set(u, y, w1.get(u, y) + w);
            }
            b1[u] = b;
        }
        let mut w2 = Matrix::zeros(self.width, hidden);
        for (slot, u, w) in self.second {
            w2.set(slot, u, w2.get(slot, u) + w);
        }
        MlpProgram::TwoLayerRelu {
            w1,
            b1,
            w2,
            b2: self.bias,
        }
    }
}

/// Chooses the number of positions, lays out the residual stream and
/// emits the encoder.
pub fn compile(c: &SymmetricCircuit, fmt: Option<FixedFormat>, opts: &CompileOptions) -> Result<CompiledCircuit> {
    c.validate()?;
    let fmt = fmt.unwrap_or(DEFAULT_FORMAT);
    fmt.validate()?;
    if fmt.frac_bits < 1 {
        return Err(Error::InsufficientPrecision {
            reason: "lookup units need half-integer biases".into(),
            required: "1 fractional bit".into(),
            available: "0".into(),
        });
    }
    let n = c.input_count;
    let s = c.wires();
    let heads = (5 * s).div_ceil(n).max(1);
    let (n_pos, plan) = match opts.positions {
        Some(p) => {
            if p < n {
                return Err(Error::Capacity(format!("{p} positions cannot hold {n} inputs")));
            }
            (p, plan(c, heads, p, opts).map_err(Error::Capacity)?)
        }
        None => {
            let mut found = None;
            let mut last = String::new();
            for p in n.max(1)..=MAX_POSITIONS {
                match plan(c, heads, p, opts) {
                    Ok(pl) => {
                        found = Some((p, pl));
                        break;
                    }
                    Err(e) => last = e,
                }
            }
            found.ok_or_else(|| Error::Capacity(format!("no position count up to {MAX_POSITIONS} fits: {last}")))?
        }
    };
    let max_fan_in = c.layers.iter().flatten().map(|g| g.fan_in()).max().unwrap_or(1);
    let largest = 2 * max_fan_in as u64 + 2;
    if largest >= 1u64 << fmt.int_bits.min(62) {
        return Err(Error::InsufficientPrecision {
            reason: "lookup units exceed the integer range".into(),
            required: format!("{largest}"),
            available: format!("{}", (1u64 << fmt.int_bits.min(62)) - 1),
        });
    }
    // Averages over r parts are rescaled by r: the rounding error of the
    // average, times r, must stay below 1/4.
    let rescale_error = plan.max_parts as f64 * 0.75 * (-(fmt.frac_bits as f64)).exp2();
    if rescale_error >= 0.25 {
        return Err(Error::InsufficientPrecision {
            reason: format!("rescaling an average over {} parts", plan.max_parts),
            required: "error < 0.25".into(),
            available: format!("{rescale_error}"),
        });
    }
    let margin = choose_exact_scale(n_pos, largest, fmt)?;
    let pos_bits = bits_for(n_pos as u64) as usize;
    let grp_bits = bits_for(plan.max_group + 1) as usize;
    let grp = POS + pos_bits;
    let dynamic = grp + grp_bits;
    let dyn_count = plan.store + 3 + plan.scratch;
    let mut d = dyn_count.max(2 * (pos_bits + grp_bits));
    while d * heads < dynamic + dyn_count {
        d += 1;
    }
    let store = dynamic;
    let part = store + plan.store;
    let slots = Slots {
        pos_bits,
        grp,
        grp_bits,
        dynamic,
        store,
        part,
        sum: part + 1,
        terms: part + 2,
        scratch: part + 3,
        dyn_count,
        d,
        heads,
        one: 1i64 << fmt.frac_bits,
    };
    let base = slots.base_head();
    let scale = margin.scale_raw;
    let mut layers = Vec::with_capacity(SUBLAYERS * c.depth());
    for (li, roles) in plan.roles.iter().enumerate() {
        let groups = &plan.groups[li];
        for k in 1..=SUBLAYERS {
            let mut heads_here: Vec<AttentionHead> = (0..heads).map(|_| AttentionHead::new(base.clone())).collect();
            let mut mlps = Vec::with_capacity(n_pos);
            for (p, role) in roles.iter().enumerate() {
                // Group codes are read by the averaging sublayers 2 and 6.
                let group = match k {
                    1 | 5 => groups[p],
                    _ => 0,
                };
                let statics = slots.statics(p, group);
                let mut set_query = |h: usize, q: Matrix| {
                    heads_here[h].overrides.insert(
                        p,
                        HeadParams {
                            q,
                            k: base.k.clone(),
                            v: base.v.clone(),
                        },
                    );
                };
                let program = sublayer(&slots, role, k, p, statics, scale, &mut set_query);
                mlps.push(program);
            }
            let mut layer = Layer::new(heads_here, MlpProgram::Identity);
            layer.mlp_overrides = mlps.into_iter().enumerate().collect();
            layers.push(layer);
        }
    }
    let embed = Embedder::Positional(PositionalEmbed {
        vectors: (0..n_pos).map(|p| slots.statics(p, 0)).collect(),
        value_slot: Some(slots.store),
    });
    let out_loc = plan
        .packing
        .iter()
        .find(|g| g.wire() == c.output_wire())
        .map(GatePlacement::output)
        .ok_or_else(|| Error::Spec("output gate was not placed".into()))?;
    let spec = TransformerSpec {
        format_version: SPEC_FORMAT_VERSION,
        dims: ModelDims::new(heads as u64, d as u64, fmt.p() as u64, layers.len() as u64)?,
        format: fmt,
        mask: Mask::Full,
        embed,
        layers,
        readout: Readout::Slot {
            slot: slots.store + out_loc.slot,
        },
    };
    spec.validate()?;
    let packing = plan
        .packing
        .into_iter()
        .map(|g| shift_slots(g, slots.store))
        .collect();
    let report = CompileReport {
        depth: spec.layers.len(),
        circuit_depth: c.depth(),
        heads_per_layer: heads,
        head_dim: d,
        width: slots.width(),
        input_count: n,
        wires: s,
        positions: n_pos,
        positions_used: plan.usage,
        packing,
        margin,
    };
    Ok(CompiledCircuit { spec, report })
}

/// Placement slots are planned relative to the store; make them absolute.
fn shift_slots(g: GatePlacement, store: usize) -> GatePlacement {
    match g {
        GatePlacement::Small {
            wire,
            layer,
            fan_in,
            position,
            heads,
            output,
        } => GatePlacement::Small {
            wire,
            layer,
            fan_in,
            position,
            heads,
            output: Location {
                position: output.position,
                slot: store + output.slot,
            },
        },
        GatePlacement::Spread {
            wire,
            layer,
            fan_in,
            padded,
            positions,
            output,
        } => GatePlacement::Spread {
            wire,
            layer,
            fan_in,
            padded,
            positions,
            output: Location {
                position: output.position,
                slot: store + output.slot,
            },
        },
    }
}

/// Self head plus a copy of every dynamic slot.
fn identity(slots: &Slots, p: usize, statics: Vec<i64>, scale: i64, set_query: &mut impl FnMut(usize, Matrix)) -> MlpProgram {
    set_query(0, slots.query_position(p, scale));
    let mut a = AffineBuilder::new(slots.width(), statics);
    for i in 0..slots.dyn_count {
        a.add(slots.dynamic + i, slots.y(0, slots.dynamic + i), slots.one);
    }
    a.build()
}

fn sublayer(
    slots: &Slots,
    role: &Role,
    k: usize,
    p: usize,
    statics: Vec<i64>,
    scale: i64,
    set_query: &mut impl FnMut(usize, Matrix),
) -> MlpProgram {
    let one = slots.one;
    let width = slots.width();
    match role {
        Role::Idle => identity(slots, p, statics, scale, set_query),
        Role::Small(gates) => match k {
            1 => {
                let mut a = AffineBuilder::new(width, statics);
                for g in gates {
                    for (t, src) in g.sources.iter().enumerate() {
                        let h = g.first_head + t;
                        set_query(h, slots.query_position(src.position, scale));
                        a.add(slots.scratch + g.sum, slots.y(h, slots.store + src.store), one);
                    }
                }
                a.build()
            }
            4 => {
                set_query(0, slots.query_position(p, scale));
                let mut r = ReluBuilder::new(width, statics);
                for g in gates {
                    let count = [(slots.y(0, slots.scratch + g.sum), 2 * one)];
                    for t in 1..=g.sources.len() {
                        let slot = slots.scratch + g.hidden + 2 * (t - 1);
                        r.step_units(slot, &count, t, one);
                    }
                }
                r.build()
            }
            5 => {
                set_query(0, slots.query_position(p, scale));
                let mut a = AffineBuilder::new(width, statics);
                for g in gates {
                    let w = g.sources.len();
                    let hid = |t: usize| {
                        let s = slots.scratch + g.hidden + 2 * (t - 1);
                        (slots.y(0, s), slots.y(0, s + 1))
                    };
                    for t in 0..=w {
                        let f = g.table[t] as i64;
                        let out = slots.scratch + g.terms + t;
                        if f == 0 {
                            continue;
                        }
                        add_indicator(&mut a, out, t, w, f * one, &hid);
                    }
                }
                a.build()
            }
            6 => {
                set_query(0, slots.query_position(p, scale));
                let mut a = AffineBuilder::new(width, statics);
                for g in gates {
                    for t in 0..=g.sources.len() {
                        a.add(slots.store + g.store, slots.y(0, slots.scratch + g.terms + t), one);
                    }
                }
                a.build()
            }
            _ => identity(slots, p, statics, scale, set_query),
        },
        Role::Spread(part) => {
            let w = part.table.len() - 1;
            let home = part.home == p;
            let r = part.r as i64;
            match k {
                1 => {
                    let mut a = AffineBuilder::new(width, statics);
                    for (h, src) in part.sources.iter().enumerate() {
                        if let Some(src) = src {
                            set_query(h, slots.query_position(src.position, scale));
                            a.add(slots.part, slots.y(h, slots.store + src.store), one);
                        }
                    }
                    a.build()
                }
                2 if home => {
                    set_query(0, slots.query_group(part.group, scale));
                    let mut b = ReluBuilder::new(width, statics);
                    let avg = [(slots.y(0, slots.part), r * one)];
                    for t in 1..=w {
                        b.step(slots.sum, &avg, t, 1, one);
                    }
                    b.build()
                }
                3 => {
                    set_query(0, slots.query_position(part.home, scale));
                    let mut a = AffineBuilder::new(width, statics);
                    a.add(slots.sum, slots.y(0, slots.sum), one);
                    a.build()
                }
                4 => {
                    set_query(0, slots.query_position(p, scale));
                    let mut b = ReluBuilder::new(width, statics);
                    let count = [(slots.y(0, slots.sum), 2 * one)];
                    for (k, &t) in part.steps.iter().enumerate() {
                        b.step_units(slots.scratch + 2 * k, &count, t, one);
                    }
                    b.build()
                }
                5 => {
                    set_query(0, slots.query_position(p, scale));
                    let mut a = AffineBuilder::new(width, statics);
                    let terms_start = slots.scratch + 2 * part.steps.len();
                    let hid = |t: usize| {
                        let k = part.steps.iter().position(|&u| u == t).expect("step unit planned");
                        (slots.y(0, slots.scratch + 2 * k), slots.y(0, slots.scratch + 2 * k + 1))
                    };
                    for (i, t) in part.chunk.clone().enumerate() {
                        let f = part.table[t] as i64;
                        if f == 0 {
                            continue;
                        }
                        add_indicator(&mut a, terms_start + i, t, w, f * one, &hid);
                        add_indicator(&mut a, slots.terms, t, w, f * one, &hid);
                    }
                    a.build()
                }
                6 if home => {
                    set_query(0, slots.query_group(part.group, scale));
                    let mut b = ReluBuilder::new(width, statics);
                    b.step(slots.store, &[(slots.y(0, slots.terms), r * one)], 1, 1, one);
                    b.build()
                }
                _ => identity(slots, p, statics, scale, set_query),
            }
        }
    }
}

/// Adds `coeff·[c = t]` to `out`, with `[c = t] = step_t − step_{t+1}`,
/// `step_0 = 1` and `step_{w+1} = 0`. `hid(t)` gives the two units of
/// `step_t`.
fn add_indicator(
    a: &mut AffineBuilder,
    out: usize,
    t: usize,
    w: usize,
    coeff: i64,
    hid: &impl Fn(usize) -> (usize, usize),
) {
    if t == 0 {
        a.bias[out] += coeff;
    } else {
        let (hi, lo) = hid(t);
        a.add(out, hi, coeff);
        a.add(out, lo, -coeff);
    }
    if t < w {
        let (hi, lo) = hid(t + 1);
        a.add(out, hi, -coeff);
        a.add(out, lo, coeff);
    }
}

/// Input tokens for a compiled circuit: position `j` carries bit `x_j`,
/// padding positions carry 0.
pub fn circuit_tokens(x: &[bool], positions: usize) -> Vec<Token> {
    (0..positions)
        .map(|j| Token {
            block: 0,
            index: j as u64 + 1,
            value: u64::from(x.get(j).copied().unwrap_or(false)),
        })
        .collect()
}

/// Runs the compiled encoder on one input.
pub fn run_compiled(compiled: &CompiledCircuit, x: &[bool]) -> Result<bool> {
    let tokens = circuit_tokens(x, compiled.report.positions);
    let acts = forward_with(&compiled.spec, &tokens, EvalOptions::default())?;
    let v = compiled
        .spec
        .answer(&acts)?
        .integer()
        .ok_or_else(|| Error::Spec("circuit readout is not an integer".into()))?;
    Ok(v == 1)
}

/// Compares every gate's designated entry with the direct evaluation.
/// Returns one message per mismatch.
pub fn check_transparency(c: &SymmetricCircuit, compiled: &CompiledCircuit, x: &[bool]) -> Result<Vec<String>> {
    let values = eval_all(c, x)?;
    let tokens = circuit_tokens(x, compiled.report.positions);
    let acts = forward_with(&compiled.spec, &tokens, EvalOptions::default())?;
    let one = 1i64 << compiled.spec.format.frac_bits;
    let mut problems = Vec::new();
    for g in &compiled.report.packing {
        let loc = g.output();
        let got = acts.x[SUBLAYERS * g.layer()][loc.position][loc.slot];
        let want = i64::from(values[g.wire()]) * one;
        if got != want {
            problems.push(format!(
                "wire {} (layer {}): entry ({}, {}) holds raw {got}, expected {want}",
                g.wire(),
                g.layer(),
                loc.position,
                loc.slot
            ));
        }
    }
    Ok(problems)
}
