//! Acceptance checks. Each criterion is one test so the harness prints one
//! pass/fail line per criterion; a short summary goes to stdout
//! (`--nocapture` shows it).

use std::collections::{BTreeSet, HashMap};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use seqcomp::builders::{build_cot_solver, build_depth_solver, build_encoder_solver};
use seqcomp::circuits::{bits_of, check_transparency, compile, eval_circuit, run_compiled, CompileOptions, SymmetricCircuit};
use seqcomp::comm::{
    certify_pair, check_locality, find_fooling_pair, run_protocol, task_answer, task_inputs, verify_reduction,
    BitProtocol, BitRule, FamilyVary, FoolingFamily, TransformerProtocol,
};
use seqcomp::engine::random::random_decoder;
use seqcomp::engine::{forward, generate_with_cot};
use seqcomp::params::{compute_schedule, verify_lower_bound_arithmetic, ModelDims};
use seqcomp::task::{evaluate, generate, instance_at, tokenize, TaskInstance, TaskParams};

const ORACLE_LIMIT: Duration = Duration::from_secs(10);
const DEPTH_LIMIT: Duration = Duration::from_secs(120);
const REDUCTION_LIMIT: Duration = Duration::from_secs(60);
const SCHEDULE_LIMIT: Duration = Duration::from_secs(5);
const FOOLING_LIMIT: Duration = Duration::from_secs(60);
const CIRCUIT_LIMIT: Duration = Duration::from_secs(120);

fn params(l: usize, m: u64, n: &[u64]) -> TaskParams {
    TaskParams::new(l, m, n.to_vec()).unwrap()
}

fn report(id: u32, name: &str, ok: bool, detail: String, elapsed: Duration) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
}

/// The instance sets shared by the solver criteria: everything at
/// (L=1, m=2) and (L=2, m=2, n=2), plus seeded draws at a larger shape.
fn solver_sets(random_shape: (usize, &[u64]), draws: u64) -> Vec<TaskInstance> {
    let mut out = Vec::new();
    for p in [params(1, 2, &[]), params(2, 2, &[2])] {
        let count = p.instance_count().unwrap();
        out.extend((0..count).map(|k| instance_at(&p, k)));
    }
    let p = params(random_shape.0, 2, random_shape.1);
    out.extend((0..draws).map(|s| generate(&p, 10_000 + s)));
    out
}

/// Evaluates the chain straight from the definition: each table is read
/// into an explicit map from (query component, previous value) by walking
/// the components in order, then the chain is followed through the maps.
fn naive_chain(inst: &TaskInstance) -> Vec<u64> {
    let p = &inst.params;
    let mut chain = vec![inst.z0];
    chain.push(inst.z[0][inst.z0 as usize - 1]);
    for ell in 1..p.l {
        let mut map = HashMap::new();
        let mut entries = inst.z[ell].iter();
        for w in 1..=p.n[ell - 1] {
            for i in 1..=p.big_n[ell - 1] {
                map.insert((w, i), *entries.next().unwrap());
            }
        }
        let prev = *chain.last().unwrap();
        chain.push(map[&(inst.w[ell - 1], prev)]);
    }
    chain
}

#[test]
fn criterion_01_oracle_matches_naive_evaluator() {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut total = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for l in 1..=3usize {
        for _ in 0..10_000 {
            let m = rng.gen_range(1..=4);
            let n: Vec<u64> = (1..l).map(|_| rng.gen_range(1..=3)).collect();
            let p = params(l, m, &n);
            let inst = generate(&p, rng.gen());
            total += 1;
            if evaluate(&inst).unwrap().i != naive_chain(&inst) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && elapsed < ORACLE_LIMIT;
    report(1, "oracle equivalence", ok, format!("{total} instances, {mismatches} mismatches"), elapsed);
    assert!(ok);
}

#[test]
fn criterion_02_depth_solver() {
    let start = Instant::now();
    let insts = solver_sets((3, &[2, 2]), 1000);
    let mut shapes_ok = true;
    let mut solvers = HashMap::new();
    for inst in &insts {
        let p = &inst.params;
        solvers.entry(p.clone()).or_insert_with(|| {
            let s = build_depth_solver(p, None).unwrap();
            shapes_ok &= s.spec.layers.len() == p.l + 1 && s.spec.layers.iter().all(|l| l.heads.len() == 1);
            s
        });
    }
    let wrong = insts
        .par_iter()
        .filter(|inst| {
            let s = &solvers[&inst.params];
            let got = s.spec.answer(&forward(&s.spec, &tokenize(inst)).unwrap()).unwrap();
            got.integer() != Some(evaluate(inst).unwrap().answer() as i64)
        })
        .count();
    let elapsed = start.elapsed();
    let ok = shapes_ok && wrong == 0 && elapsed < DEPTH_LIMIT;
    report(
        2,
        "depth solver",
        ok,
        format!("L+1 layers x 1 head: {shapes_ok}; {} instances, {wrong} wrong", insts.len()),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn criterion_03_cot_solver() {
    let start = Instant::now();
    let insts = solver_sets((3, &[2, 2]), 1000);
    let mut shapes_ok = true;
    let mut solvers = HashMap::new();
    for inst in &insts {
        let p = &inst.params;
        solvers.entry(p.clone()).or_insert_with(|| {
            let s = build_cot_solver(p, None).unwrap();
            shapes_ok &= s.spec.layers.len() == 1 && s.steps == p.l;
            s
        });
    }
    let wrong = insts
        .par_iter()
        .filter(|inst| {
            let s = &solvers[&inst.params];
            let generated = generate_with_cot(&s.spec, &tokenize(inst), s.steps, &s.decoder).unwrap();
            s.chain(&generated) != evaluate(inst).unwrap().i[1..]
        })
        .count();
    let elapsed = start.elapsed();
    let ok = shapes_ok && wrong == 0;
    report(
        3,
        "chain-of-thought solver",
        ok,
        format!("1 layer, L steps: {shapes_ok}; {} chains, {wrong} wrong", insts.len()),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn criterion_04_encoder_solver() {
    let start = Instant::now();
    let mut insts = solver_sets((4, &[2, 2, 2]), 1000);
    insts.extend((0..200).map(|s| generate(&params(3, 2, &[2, 2]), s)));
    let mut depths = std::collections::BTreeMap::new();
    let mut shapes_ok = true;
    let mut solvers = HashMap::new();
    for inst in &insts {
        let p = &inst.params;
        solvers.entry(p.clone()).or_insert_with(|| {
            let s = build_encoder_solver(p, None).unwrap();
            let bound = 2 * (p.l as f64).log2().ceil() as usize + 3;
            shapes_ok &= s.spec.layers.len() <= bound;
            depths.insert(p.l, (s.spec.layers.len(), bound));
            s
        });
    }
    let wrong = insts
        .par_iter()
        .filter(|inst| {
            let s = &solvers[&inst.params];
            let got = s.spec.answer(&forward(&s.spec, &tokenize(inst)).unwrap()).unwrap();
            got.integer() != Some(evaluate(inst).unwrap().answer() as i64)
        })
        .count();
    let elapsed = start.elapsed();
    let ok = shapes_ok && wrong == 0;
    let shown: Vec<String> = depths
        .iter()
        .map(|(l, (d, b))| format!("L={l}: {d} layers (bound {b})"))
        .collect();
    report(
        4,
        "encoder solver",
        ok,
        format!("{}; {} instances, {wrong} wrong", shown.join(", "), insts.len()),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn criterion_05_reduction() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut varied = 0;
    for k in 0..20u64 {
        let l = rng.gen_range(1..=3usize);
        let (h, d, p) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(2..=8));
        let n: Vec<u64> = (1..l).map(|_| rng.gen_range(1..=2)).collect();
        let task = params(l, rng.gen_range(2..=3), &n);
        let spec = random_decoder(&task, ModelDims::new(h, d, p, l as u64).unwrap(), 500 + k).unwrap();
        let r = verify_reduction(&spec, &task, 20, 1000 * k).unwrap();
        let formula_ok = r.sizes.iter().all(|s| {
            let m_i = if s.receiver >= 1 { task.domain(s.receiver as usize - 1) } else { 1 };
            s.formula == m_i * h * (d * p + p) && s.observed == s.formula && s.formula <= 2 * h * d * p * m_i
        });
        if !(r.passed && formula_ok && r.matches == 20) {
            failures.push(k);
        }
        let answers: BTreeSet<String> = (0..20)
            .map(|t| {
                let prompt = tokenize(&generate(&task, 1000 * k + t));
                format!("{:?}", spec.answer(&forward(&spec, &prompt).unwrap()).unwrap())
            })
            .collect();
        if answers.len() > 1 {
            varied += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < REDUCTION_LIMIT;
    report(
        5,
        "reduction equivalence",
        ok,
        format!("20 specs x 20 instances, failing specs {failures:?}; {varied} specs with varying answers"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn criterion_06_locality() {
    let start = Instant::now();
    let mut violations = 0;
    let mut compared = 0;
    let shapes = [
        (params(2, 2, &[2]), ModelDims::new(2, 2, 8, 2).unwrap()),
        (params(3, 2, &[2, 2]), ModelDims::new(1, 3, 6, 3).unwrap()),
    ];
    for (k, (task, dims)) in shapes.into_iter().enumerate() {
        let spec = random_decoder(&task, dims, 60 + k as u64).unwrap();
        let proto = TransformerProtocol::new(spec, task.clone()).unwrap();
        let r = check_locality(&proto, &task, 500, 600 + k as u64).unwrap();
        violations += r.violations.len();
        compared += r.compared;
    }
    let elapsed = start.elapsed();
    let ok = violations == 0;
    report(
        6,
        "transcript locality",
        ok,
        format!("1000 perturbations, {compared} messages compared, {violations} violations"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn criterion_07_schedule_verifier() {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for (h, d, p, l) in [(1, 1, 1, 2), (1, 1, 2, 2), (2, 1, 1, 2)] {
        let dims = ModelDims::new(h, d, p, l).unwrap();
        let render = || {
            let s = compute_schedule(dims).unwrap();
            let v = verify_lower_bound_arithmetic(&s, dims).unwrap();
            (v.all_pass(), seqcomp::canonical::to_string(&(&s, &v)).unwrap())
        };
        let (pass, first) = render();
        let (_, second) = render();
        ok &= pass && first == second;
        lines.push(format!("({h},{d},{p},{l}) pass={pass} identical={}", first == second));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < SCHEDULE_LIMIT;
    report(7, "schedule verifier", ok, lines.join(", "), elapsed);
    assert!(ok);
}

#[test]
fn criterion_08_fooling_pairs() {
    let families = [
        ("L=1 m=20 B=1", params(1, 20, &[]), BitRule::Forward),
        ("L=1 m=20 B=1", params(1, 20, &[]), BitRule::Hash { seed: 8 }),
        ("L=2 m=65 n=64 B=1", params(2, 65, &[64]), BitRule::Forward),
        ("L=2 m=65 n=64 B=1", params(2, 65, &[64]), BitRule::Hash { seed: 8 }),
    ];
    let mut all_ok = true;
    for (name, task, rule) in families {
        let start = Instant::now();
        let proto = BitProtocol::new(task.clone(), 1, rule.clone()).unwrap();
        let family = FoolingFamily::new(&task, 8, FamilyVary::QueriedEntry).unwrap();
        let r = find_fooling_pair(&proto, &family, task_answer).unwrap();
        let premise = r.bits_only && r.view_bits <= 12 && (r.distinct_answers as u128) > 1u128 << r.view_bits;
        let certified = match &r.pair {
            Some(pair) => {
                let a = run_protocol(&proto, &task_inputs(&tokenize(&family.member(pair.first)))).unwrap();
                let b = run_protocol(&proto, &task_inputs(&tokenize(&family.member(pair.second)))).unwrap();
                a.view(-1) == b.view(-1) && certify_pair(&proto, &family, pair, task_answer).unwrap()
            }
            None => false,
        };
        let elapsed = start.elapsed();
        let ok = premise && r.guaranteed && certified && elapsed < FOOLING_LIMIT;
        all_ok &= ok;
        report(
            8,
            "fooling pair",
            ok,
            format!(
                "{name} {rule:?}: {} answers over {} view bits, pair certified: {certified}",
                r.distinct_answers, r.view_bits
            ),
            elapsed,
        );
    }
    assert!(all_ok);
}

#[test]
fn criterion_09_circuit_compiler() {
    let start = Instant::now();
    let mut circuits: Vec<(String, SymmetricCircuit)> =
        (1..=8).map(|n| (format!("parity{n}"), SymmetricCircuit::parity(n))).collect();
    circuits.extend((1..=4).map(|k| (format!("ip{k}"), SymmetricCircuit::inner_product_mod2(k))));
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, c) in &circuits {
        let compiled = compile(c, None, &CompileOptions::default()).unwrap();
        let n = c.input_count;
        let bad = (0..1u64 << n)
            .into_par_iter()
            .filter(|&v| {
                let x = bits_of(v, n);
                run_compiled(&compiled, &x).unwrap() != eval_circuit(c, &x).unwrap()
                    || !check_transparency(c, &compiled, &x).unwrap().is_empty()
            })
            .count();
        let depth_ok = compiled.spec.layers.len() <= 6 * c.depth();
        ok &= bad == 0 && depth_ok;
        lines.push(format!("{name}: depth {}/{} bad {bad}", compiled.spec.layers.len(), 6 * c.depth()));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < CIRCUIT_LIMIT;
    report(9, "circuit compiler", ok, lines.join(", "), elapsed);
    assert!(ok);
}

fn cli(args: &[&str], threads: &str) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_seqcomp"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn result_part(report: &[u8]) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_slice(report).unwrap();
    v["result"].clone()
}

#[test]
fn criterion_10_cli_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).display().to_string();
    let task = path("task.json");
    let spec = path("spec.json");
    let circuit = path("parity.json");
    let family = path("family.json");
    std::fs::write(&circuit, serde_json::to_string(&SymmetricCircuit::parity(5)).unwrap()).unwrap();
    std::fs::write(
        &family,
        r#"{"params":{"L":1,"m":20},"seed":3,"vary":{"kind":"queriedEntry"},"protocol":{"kind":"bits","bitsPerToken":1,"rule":{"kind":"hash","seed":2}}}"#,
    )
    .unwrap();
    let (code, _) = cli(&["gen-task", "--L", "2", "--m", "3", "--n", "2", "--seed", "4", "--out", &task], "1");
    assert_eq!(code, 0);
    let (code, _) = cli(&["solve", "--builder", "depth", "--task", &task, "--emit-spec", &spec], "1");
    assert_eq!(code, 0);
    let commands: Vec<Vec<&str>> = vec![
        vec!["schedule", "--H", "1", "--d", "1", "--p", "1", "--L", "2", "--verify"],
        vec!["gen-task", "--L", "3", "--m", "2", "--n", "2,2", "--seed", "9"],
        vec!["eval-task", &task],
        vec!["solve", "--builder", "depth", "--task", &task],
        vec!["solve", "--builder", "cot", "--task", &task],
        vec!["solve", "--builder", "encoder", "--task", &task],
        vec!["run", "--spec", &spec, "--prompt", &task, "--trace"],
        vec!["run", "--spec", &spec, "--prompt", &task, "--trace", "--parallel"],
        vec!["verify-reduction", "--L", "2", "--m", "2", "--n", "2", "--H", "2", "--d", "2", "--trials", "10", "--seed", "3", "--locality", "10"],
        vec!["fool", "--family-spec", &family],
        vec!["compile-circuit", "--in", &circuit],
        vec!["check-circuit", "--in", &circuit, "--exhaustive"],
        vec!["check-circuit", "--in", &circuit, "--trials", "50", "--seed", "2", "--format", "csv"],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        let (c1, first) = cli(args, "1");
        let (c2, second) = cli(args, "4");
        let (c3, third) = cli(args, "4");
        if c1 != 0 || first != second || second != third || (c1, c2) != (c2, c3) {
            differing.push(args[0].to_string());
        }
    }
    let serial = cli(&["run", "--spec", &spec, "--prompt", &task, "--trace"], "4").1;
    let parallel = cli(&["run", "--spec", &spec, "--prompt", &task, "--trace", "--parallel"], "4").1;
    let same_result = result_part(&serial) == result_part(&parallel);
    let elapsed = start.elapsed();
    let ok = differing.is_empty() && same_result;
    report(
        10,
        "CLI determinism",
        ok,
        format!(
            "{} commands x 3 runs (1 and 4 threads), differing {differing:?}, parallel run matches serial: {same_result}",
            commands.len()
        ),
        elapsed,
    );
    assert!(ok);
}
