use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use seqcomp::builders::{build_cot_solver, build_depth_solver, build_encoder_solver, DEFAULT_FORMAT};
use seqcomp::circuits::{
    bits_of, check_transparency, compile, eval_circuit, run_compiled, CompileOptions, SymmetricCircuit,
};
use seqcomp::comm::{
    certify_pair, check_locality, find_fooling_pair, task_answer, verify_reduction as reduce_and_compare, BitProtocol,
    BitRule, FamilyVary, FoolingFamily, Protocol, TransformerProtocol,
};
use seqcomp::engine::random::random_decoder;
use seqcomp::engine::{forward_with, generate_with_cot, EvalOptions, TransformerSpec};
use seqcomp::numerics::FixedFormat;
use seqcomp::params::{compute_schedule, verify_lower_bound_arithmetic, ModelDims};
use seqcomp::task::{evaluate, generate, tokenize, Prompt, TaskInstance, TaskParams};

use crate::report::{write_json, Outcome, RunManifest};
use crate::{
    Builder, CheckCircuitArgs, CompileCircuitArgs, EvalTaskArgs, FoolArgs, GenTaskArgs, LayoutArgs, PrecisionArgs,
    RunArgs, ScheduleArgs, SolveArgs, TaskShape, VerifyReductionArgs,
};

/// Inputs beyond this many bits are never enumerated.
const MAX_EXHAUSTIVE_INPUTS: usize = 20;

/// Default for `check-circuit` without `--exhaustive` or `--trials`:
/// enumerate up to this many input bits, sample above it.
const DEFAULT_EXHAUSTIVE_INPUTS: usize = 16;
const DEFAULT_TRIALS: usize = 1000;

/// Mismatches listed in a report; the count is always complete.
const LISTED_FAILURES: usize = 16;

fn task_params(shape: &TaskShape) -> Result<TaskParams> {
    Ok(TaskParams::new(shape.l, shape.m, shape.n.clone())?)
}

fn format_of(p: &PrecisionArgs) -> Result<Option<FixedFormat>> {
    if p.int_bits.is_none() && p.frac_bits.is_none() {
        return Ok(None);
    }
    Ok(Some(FixedFormat::new(
        p.int_bits.unwrap_or(DEFAULT_FORMAT.int_bits),
        p.frac_bits.unwrap_or(DEFAULT_FORMAT.frac_bits),
    )?))
}

pub fn schedule(_m: &mut RunManifest, a: &ScheduleArgs) -> Result<Outcome> {
    let dims = ModelDims::new(a.h, a.d, a.p, a.l)?;
    let schedule = compute_schedule(dims)?;
    if !a.verify {
        return Outcome::ok(&json!({ "dims": dims, "schedule": schedule }));
    }
    let verify = verify_lower_bound_arithmetic(&schedule, dims)?;
    let passed = verify.all_pass();
    Outcome::checked(&json!({ "dims": dims, "schedule": schedule, "verify": verify }), passed)
}

pub fn gen_task(m: &mut RunManifest, a: &GenTaskArgs) -> Result<Outcome> {
    let params = task_params(&a.shape)?;
    m.seed("seed", a.seed);
    let inst = generate(&params, a.seed);
    let chain = evaluate(&inst)?;
    let mut result = json!({ "params": params, "seed": a.seed, "chain": chain.i, "answer": chain.answer() });
    match &a.out {
        Some(path) => {
            write_json(path, &inst)?;
            result["out"] = json!(path.display().to_string());
        }
        None => result["instance"] = serde_json::to_value(&inst)?,
    }
    Outcome::ok(&result)
}

fn read_instance(m: &mut RunManifest, path: &std::path::Path) -> Result<TaskInstance> {
    let inst: TaskInstance = m.read_json(path)?;
    inst.validate()?;
    Ok(inst)
}

pub fn eval_task(m: &mut RunManifest, a: &EvalTaskArgs) -> Result<Outcome> {
    let inst = read_instance(m, &a.file)?;
    let chain = evaluate(&inst)?;
    Outcome::ok(&json!({ "params": inst.params, "chain": chain.i, "answer": chain.answer() }))
}

#[derive(Serialize)]
struct SolveResult {
    builder: &'static str,
    answer: Option<i64>,
    #[serde(rename = "oracleAnswer")]
    oracle_answer: u64,
    correct: bool,
    /// Chain read off the generated tokens (chain-of-thought only).
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<Vec<u64>>,
    #[serde(rename = "oracleChain")]
    oracle_chain: Vec<u64>,
    depth: usize,
    report: seqcomp::builders::SolverReport,
}

pub fn solve(m: &mut RunManifest, a: &SolveArgs) -> Result<Outcome> {
    let inst = read_instance(m, &a.task)?;
    let oracle = evaluate(&inst)?;
    let fmt = format_of(&a.precision)?;
    let prompt = tokenize(&inst);
    let (name, spec, report, answer, chain) = match a.builder {
        Builder::Depth | Builder::Encoder => {
            let (name, spec, report) = match a.builder {
                Builder::Depth => {
                    let s = build_depth_solver(&inst.params, fmt)?;
                    ("depth", s.spec, s.report)
                }
                _ => {
                    let s = build_encoder_solver(&inst.params, fmt)?;
                    ("encoder", s.spec, s.report)
                }
            };
            let acts = forward_with(&spec, &prompt.tokens, EvalOptions::default())?;
            let answer = spec.answer(&acts)?.integer();
            (name, spec, report, answer, None)
        }
        Builder::Cot => {
            let s = build_cot_solver(&inst.params, fmt)?;
            let generated = generate_with_cot(&s.spec, &prompt, s.steps, &s.decoder)?;
            let chain = s.chain(&generated);
            let answer = chain.last().map(|&v| v as i64);
            ("cot", s.spec, s.report, answer, Some(chain))
        }
    };
    if let Some(path) = &a.emit_spec {
        write_json(path, &spec)?;
    }
    let oracle_chain = oracle.i[1..].to_vec();
    let correct =
        answer == Some(oracle.answer() as i64) && chain.as_ref().is_none_or(|c| *c == oracle_chain);
    let result = SolveResult {
        builder: name,
        answer,
        oracle_answer: oracle.answer(),
        correct,
        chain,
        oracle_chain,
        depth: spec.layers.len(),
        report,
    };
    Outcome::checked(&result, correct)
}

pub fn run(m: &mut RunManifest, a: &RunArgs) -> Result<Outcome> {
    let spec: TransformerSpec = m.read_json(&a.spec)?;
    spec.validate()?;
    let doc: Value = m.read_json(&a.prompt)?;
    let prompt = if doc.get("z0").is_some() {
        let inst: TaskInstance = serde_json::from_value(doc).context("parsing task instance")?;
        inst.validate()?;
        tokenize(&inst)
    } else {
        serde_json::from_value::<Prompt>(doc).context("parsing prompt")?
    };
    let opts = EvalOptions {
        trace: a.trace,
        parallel: a.parallel,
    };
    let acts = forward_with(&spec, &prompt.tokens, opts)?;
    let answer = spec.answer(&acts)?;
    let mut result = json!({
        "answer": answer,
        "positions": prompt.len(),
        "layers": spec.layers.len(),
        "saturations": acts.saturations,
    });
    if a.trace {
        result["activations"] = serde_json::to_value(&acts)?;
    }
    Outcome::ok(&result)
}

pub fn verify_reduction(m: &mut RunManifest, a: &VerifyReductionArgs) -> Result<Outcome> {
    let params = task_params(&a.shape)?;
    let (spec, source) = match &a.spec {
        Some(path) => (m.read_json::<TransformerSpec>(path)?, "file"),
        None => {
            m.seed("specSeed", a.spec_seed);
            let dims = ModelDims::new(a.h, a.d, a.p, params.l as u64)?;
            (random_decoder(&params, dims, a.spec_seed)?, "random")
        }
    };
    m.seed("seed", a.seed);
    let report = reduce_and_compare(&spec, &params, a.trials, a.seed)?;
    let mut passed = report.passed;
    let mut result = json!({ "specSource": source, "dims": spec.dims, "reduction": report });
    if a.locality > 0 {
        let proto = TransformerProtocol::new(spec, params.clone())?;
        let loc = check_locality(&proto, &params, a.locality, a.seed)?;
        passed &= loc.violations.is_empty();
        result["locality"] = serde_json::to_value(&loc)?;
    }
    Outcome::checked(&result, passed)
}

/// Contents of a `--family-spec` file.
#[derive(Debug, Deserialize, Serialize)]
struct FamilySpec {
    params: TaskParams,
    seed: u64,
    vary: FamilyVary,
    protocol: ProtocolChoice,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
enum ProtocolChoice {
    /// The reduction of the decoder given by `--spec`.
    Transformer,
    Bits {
        #[serde(rename = "bitsPerToken")]
        bits_per_token: u64,
        rule: BitRule,
    },
}

fn fool_with<P: Protocol>(proto: &P, family: &FoolingFamily) -> Result<Outcome> {
    let report = find_fooling_pair(proto, family, task_answer)?;
    let certified = match &report.pair {
        Some(pair) => Some(certify_pair(proto, family, pair, task_answer)?),
        None => None,
    };
    let passed = certified != Some(false);
    Outcome::checked(&json!({ "report": report, "certified": certified }), passed)
}

pub fn fool(m: &mut RunManifest, a: &FoolArgs) -> Result<Outcome> {
    let fam: FamilySpec = m.read_json(&a.family_spec)?;
    m.seed("familySeed", fam.seed);
    let family = FoolingFamily::new(&fam.params, fam.seed, fam.vary)?;
    match fam.protocol {
        ProtocolChoice::Transformer => {
            let Some(path) = &a.spec else {
                bail!(seqcomp::Error::InvalidParams("a transformer family needs --spec".into()));
            };
            let spec: TransformerSpec = m.read_json(path)?;
            fool_with(&TransformerProtocol::new(spec, fam.params)?, &family)
        }
        ProtocolChoice::Bits { bits_per_token, rule } => {
            fool_with(&BitProtocol::new(fam.params, bits_per_token, rule)?, &family)
        }
    }
}

fn compile_opts(l: &LayoutArgs) -> CompileOptions {
    CompileOptions {
        positions: l.positions,
        extra_padding: l.extra_padding,
    }
}

pub fn compile_circuit(m: &mut RunManifest, a: &CompileCircuitArgs) -> Result<Outcome> {
    let circuit: SymmetricCircuit = m.read_json(&a.input)?;
    circuit.validate()?;
    let compiled = compile(&circuit, format_of(&a.precision)?, &compile_opts(&a.layout))?;
    if let Some(path) = &a.out {
        write_json(path, &compiled.spec)?;
    }
    Outcome::ok(&compiled.report)
}

#[derive(Serialize)]
struct Mismatch {
    input: String,
    expected: bool,
    got: bool,
}

#[derive(Serialize)]
struct CheckResult {
    mode: &'static str,
    checked: usize,
    #[serde(rename = "circuitDepth")]
    circuit_depth: usize,
    depth: usize,
    #[serde(rename = "depthBound")]
    depth_bound: usize,
    mismatches: usize,
    #[serde(rename = "transparencyFailures")]
    transparency_failures: usize,
    examples: Vec<Mismatch>,
    #[serde(rename = "transparencyExamples")]
    transparency_examples: Vec<String>,
}

fn bit_string(x: &[bool]) -> String {
    x.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn check_circuit(m: &mut RunManifest, a: &CheckCircuitArgs) -> Result<Outcome> {
    let circuit: SymmetricCircuit = m.read_json(&a.input)?;
    circuit.validate()?;
    let compiled = compile(&circuit, format_of(&a.precision)?, &compile_opts(&a.layout))?;
    let n = circuit.input_count;
    let exhaustive = a.exhaustive || (a.trials.is_none() && n <= DEFAULT_EXHAUSTIVE_INPUTS);
    let inputs: Vec<Vec<bool>> = if exhaustive {
        if n > MAX_EXHAUSTIVE_INPUTS {
            bail!(seqcomp::Error::InvalidParams(format!(
                "{n} inputs are too many to enumerate (limit {MAX_EXHAUSTIVE_INPUTS})"
            )));
        }
        (0..1u64 << n).map(|v| bits_of(v, n)).collect()
    } else {
        m.seed("seed", a.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..a.trials.unwrap_or(DEFAULT_TRIALS))
            .map(|_| (0..n).map(|_| rng.gen_bool(0.5)).collect())
            .collect()
    };
    let rows = inputs
        .par_iter()
        .map(|x| {
            let expected = eval_circuit(&circuit, x)?;
            let got = run_compiled(&compiled, x)?;
            let problems = check_transparency(&circuit, &compiled, x)?;
            Ok((expected, got, problems))
        })
        .collect::<seqcomp::Result<Vec<_>>>()?;
    let mut result = CheckResult {
        mode: if exhaustive { "exhaustive" } else { "sampled" },
        checked: inputs.len(),
        circuit_depth: circuit.depth(),
        depth: compiled.report.depth,
        depth_bound: 6 * circuit.depth(),
        mismatches: 0,
        transparency_failures: 0,
        examples: Vec::new(),
        transparency_examples: Vec::new(),
    };
    for (x, (expected, got, problems)) in inputs.iter().zip(rows) {
        if expected != got {
            result.mismatches += 1;
            if result.examples.len() < LISTED_FAILURES {
                result.examples.push(Mismatch {
                    input: bit_string(x),
                    expected,
                    got,
                });
            }
        }
        if !problems.is_empty() {
            result.transparency_failures += 1;
            if result.transparency_examples.len() < LISTED_FAILURES {
                result
                    .transparency_examples
                    .push(format!("{}: {}", bit_string(x), problems.join("; ")));
            }
        }
    }
    let passed =
        result.mismatches == 0 && result.transparency_failures == 0 && result.depth <= result.depth_bound;
    Outcome::checked(&result, passed)
}
