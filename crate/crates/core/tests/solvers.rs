use proptest::prelude::*;
use seqcomp::builders::{build_cot_solver, build_depth_solver, build_encoder_solver};
use seqcomp::engine::{forward, forward_with, generate_with_cot, EvalOptions};
use seqcomp::task::{evaluate, generate, instance_at, tokenize, TaskParams};

fn params(l: usize, m: u64, n: &[u64]) -> TaskParams {
    TaskParams::new(l, m, n.to_vec()).unwrap()
}

#[test]
fn depth_solver_is_exact_on_every_small_instance() {
    for p in [params(1, 2, &[]), params(2, 2, &[2])] {
        let solver = build_depth_solver(&p, None).unwrap();
        assert_eq!(solver.spec.layers.len(), p.l + 1);
        assert_eq!(solver.spec.dims.h, 1);
        let total = p.instance_count().unwrap();
        for idx in 0..total {
            let inst = instance_at(&p, idx);
            let want = evaluate(&inst).unwrap().answer() as i64;
            let acts = forward(&solver.spec, &tokenize(&inst)).unwrap();
            assert_eq!(solver.spec.answer(&acts).unwrap().integer(), Some(want), "instance {idx}");
        }
    }
}

#[test]
fn depth_solver_margin_matches_trace() {
    let p = params(3, 2, &[2, 2]);
    let solver = build_depth_solver(&p, None).unwrap();
    let inst = generate(&p, 7);
    let acts = forward_with(&solver.spec, &tokenize(&inst).tokens, EvalOptions { trace: true, parallel: false }).unwrap();
    let trace = acts.trace.unwrap();
    let scale = solver.report.margin.scale;
    for layer in &trace {
        for row in &layer[0] {
            // Every row has a matching key; a perfect tie is the query's
            // even split between itself and its match.
            let gap = row.top_gap().map(|g| g.to_rational());
            if let Some(gap) = gap {
                use num_traits::{ToPrimitive, Zero};
                assert!(gap.is_zero() || gap.to_f64().unwrap() >= scale - 1e-9);
            }
        }
    }
}

#[test]
fn cot_solver_reproduces_chain() {
    for p in [params(1, 3, &[]), params(2, 2, &[3]), params(3, 2, &[2, 2])] {
        let solver = build_cot_solver(&p, None).unwrap();
        assert_eq!(solver.spec.layers.len(), 1);
        for seed in 0..40 {
            let inst = generate(&p, seed);
            let chain = evaluate(&inst).unwrap();
            let generated = generate_with_cot(&solver.spec, &tokenize(&inst), solver.steps, &solver.decoder).unwrap();
            assert_eq!(solver.chain(&generated), chain.i[1..].to_vec(), "seed {seed}");
        }
    }
}

#[test]
fn encoder_solver_depth_is_logarithmic() {
    for (l, layers) in [(1usize, 3usize), (2, 4), (4, 5)] {
        let n = vec![2; l - 1];
        let p = params(l, 2, &n);
        let solver = build_encoder_solver(&p, None).unwrap();
        assert_eq!(solver.spec.layers.len(), layers);
        for seed in 0..40 {
            let inst = generate(&p, seed);
            let want = evaluate(&inst).unwrap().answer() as i64;
            let acts = forward(&solver.spec, &tokenize(&inst)).unwrap();
            assert_eq!(solver.spec.answer(&acts).unwrap().integer(), Some(want));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn depth_solver_agrees_with_oracle(seed in any::<u64>(), l in 1usize..4, m in 1u64..4, n1 in 1u64..3) {
        let p = params(l, m, &vec![n1; l - 1]);
        let solver = build_depth_solver(&p, None).unwrap();
        let inst = generate(&p, seed);
        let acts = forward(&solver.spec, &tokenize(&inst)).unwrap();
        prop_assert_eq!(
            solver.spec.answer(&acts).unwrap().integer(),
            Some(evaluate(&inst).unwrap().answer() as i64)
        );
    }
}
