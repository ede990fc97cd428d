use std::collections::BTreeMap;

use proptest::prelude::*;
use seqcomp::comm::{
    certify_pair, check_locality, find_fooling_pair, run_protocol, task_answer, task_inputs, verify_reduction,
    BitProtocol, BitRule, FamilyVary, FoolingFamily, Payload, PlayerState, Protocol, TransformerProtocol,
};
use seqcomp::engine::random::random_decoder;
use seqcomp::engine::{forward, Answer};
use seqcomp::params::ModelDims;
use seqcomp::task::{generate, tokenize, TaskParams, Token};
use seqcomp::Error;

fn params(l: usize, m: u64, n: &[u64]) -> TaskParams {
    TaskParams::new(l, m, n.to_vec()).unwrap()
}

fn inputs(p: &TaskParams, seed: u64) -> BTreeMap<i32, Vec<Token>> {
    task_inputs(&tokenize(&generate(p, seed)))
}

#[test]
fn constant_protocol_sends_full_size_zero_messages() {
    let p = params(2, 2, &[2]);
    let proto = BitProtocol::new(p.clone(), 3, BitRule::Constant).unwrap();
    let run = run_protocol(&proto, &inputs(&p, 1)).unwrap();
    assert_eq!(run.answer, Answer::Integer { value: 0 });
    // Two epochs, one message per ordered pair of the four players.
    assert_eq!(run.transcripts.len(), 2 * 6);
    for t in &run.transcripts {
        assert_eq!(t.size(), 2 * 3 * proto.tokens(t.receiver) as u64);
        assert!(matches!(&t.payload, Payload::Bits { bits } if bits.iter().all(|b| !b)));
    }
    assert!(run.is_monotone());
}

#[test]
fn forwarder_delivers_the_top_table() {
    let p = params(1, 2, &[]);
    // Values fit in 2 bits, the table has 2 entries and player -1 may
    // receive 2·B bits, so B = 2 carries the whole table.
    let proto = BitProtocol::new(p.clone(), 2, BitRule::Forward).unwrap();
    assert_eq!(proto.value_width(), 2);
    for seed in 0..8 {
        let inst = generate(&p, seed);
        let run = run_protocol(&proto, &task_inputs(&tokenize(&inst))).unwrap();
        let expected: Vec<i64> = inst.table(1).iter().map(|&v| v as i64).collect();
        assert_eq!(run.answer, Answer::Vector { raw: expected });
    }
}

struct Oversized;

impl Protocol for Oversized {
    fn epochs(&self) -> usize {
        1
    }
    fn players(&self) -> Vec<i32> {
        vec![-1, 0, 1]
    }
    fn tokens(&self, player: i32) -> usize {
        if player == 1 {
            2
        } else {
            1
        }
    }
    fn budget(&self) -> u64 {
        1
    }
    fn respond(&self, _: usize, sender: &PlayerState, _: &PlayerState) -> seqcomp::Result<Payload> {
        let n = if sender.player == 1 { 3 } else { 2 };
        Ok(Payload::Bits { bits: vec![true; n] })
    }
    fn output(&self, _: &PlayerState) -> seqcomp::Result<Answer> {
        Ok(Answer::Integer { value: 0 })
    }
}

#[test]
fn wrong_size_message_names_the_offender() {
    let p = params(1, 2, &[]);
    match run_protocol(&Oversized, &inputs(&p, 0)) {
        Err(Error::ProtocolViolation {
            epoch, sender, receiver, ..
        }) => assert_eq!((epoch, sender, receiver), (1, 1, -1)),
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn input_lengths_are_checked() {
    let p = params(1, 2, &[]);
    let proto = BitProtocol::new(p.clone(), 1, BitRule::Constant).unwrap();
    let mut bad = inputs(&p, 0);
    bad.get_mut(&1).unwrap().pop();
    assert!(matches!(run_protocol(&proto, &bad), Err(Error::InvalidParams(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn states_only_grow(l in 1usize..=3, m in 2u64..=3, b in 1u64..=3, key in any::<u64>(), seed in any::<u64>()) {
        let p = params(l, m, &vec![2; l - 1]);
        let proto = BitProtocol::new(p.clone(), b, BitRule::Hash { seed: key }).unwrap();
        let run = run_protocol(&proto, &inputs(&p, seed)).unwrap();
        prop_assert!(run.is_monotone());
        prop_assert_eq!(run.states.len(), l + 1);
        let again = run_protocol(&proto, &inputs(&p, seed)).unwrap();
        prop_assert_eq!(run.view(-1), again.view(-1));
    }
}

#[test]
fn reduction_matches_the_engine_on_random_decoders() {
    let shapes = [
        (1, 3, vec![], 1, 1, 4),
        (1, 2, vec![], 2, 3, 8),
        (2, 2, vec![2], 1, 2, 6),
        (2, 3, vec![2], 2, 4, 8),
        (3, 2, vec![2, 2], 2, 2, 8),
        (3, 2, vec![1, 2], 1, 4, 5),
    ];
    for (k, (l, m, n, h, d, prec)) in shapes.into_iter().enumerate() {
        let p = params(l, m, &n);
        let dims = ModelDims::new(h, d, prec, l as u64).unwrap();
        let spec = random_decoder(&p, dims, 100 + k as u64).unwrap();
        let report = verify_reduction(&spec, &p, 20, 7).unwrap();
        assert!(report.passed, "shape {k}: {report:?}");
        assert_eq!(report.matches, 20);
        assert_eq!(report.epochs, l);
        for s in &report.sizes {
            let m_i = if s.receiver >= 1 { p.domain(s.receiver as usize - 1) } else { 1 };
            assert_eq!(s.formula, m_i * h * (d * prec + prec));
            assert!(s.formula <= 2 * h * d * prec * m_i);
        }
    }
}

#[test]
fn one_layer_reduction_sums_match_direct_attention() {
    let p = params(1, 3, &[]);
    let dims = ModelDims::new(1, 2, 8, 1).unwrap();
    let spec = random_decoder(&p, dims, 5).unwrap();
    let proto = TransformerProtocol::new(spec.clone(), p.clone()).unwrap();
    let prompt = tokenize(&generate(&p, 11));
    let run = run_protocol(&proto, &task_inputs(&prompt)).unwrap();
    assert_eq!(run.states.len(), 2);
    let acts = forward(&spec, &prompt).unwrap();
    let last = acts.x[1].last().unwrap().clone();
    assert_eq!(run.answer, Answer::Vector { raw: last });
}

#[test]
fn reduction_refuses_full_masks() {
    let p = params(1, 2, &[]);
    let mut spec = random_decoder(&p, ModelDims::new(1, 1, 4, 1).unwrap(), 0).unwrap();
    spec.mask = seqcomp::engine::Mask::Full;
    assert!(matches!(TransformerProtocol::new(spec, p), Err(Error::Unsupported(_))));
}

#[test]
fn messages_ignore_lower_players() {
    let p = params(2, 2, &[2]);
    let spec = random_decoder(&p, ModelDims::new(2, 2, 6, 2).unwrap(), 3).unwrap();
    let proto = TransformerProtocol::new(spec, p.clone()).unwrap();
    let report = check_locality(&proto, &p, 50, 9).unwrap();
    assert!(report.violations.is_empty(), "{:?}", report.violations);
    assert!(report.compared > 0);

    let p = params(3, 2, &[2, 2]);
    let hash = BitProtocol::new(p.clone(), 2, BitRule::Hash { seed: 4 }).unwrap();
    let report = check_locality(&hash, &p, 100, 1).unwrap();
    assert!(report.violations.is_empty());
}

#[test]
fn constant_protocol_is_fooled() {
    let p = params(1, 4, &[]);
    let proto = BitProtocol::new(p.clone(), 1, BitRule::Constant).unwrap();
    let fam = FoolingFamily::new(&p, 2, FamilyVary::QueriedEntry).unwrap();
    let report = find_fooling_pair(&proto, &fam, task_answer).unwrap();
    assert_eq!(report.distinct_views, 1);
    assert_eq!(report.distinct_answers, 4);
    let pair = report.pair.unwrap();
    assert_eq!((pair.first, pair.second), (0, 1));
    assert!(certify_pair(&proto, &fam, &pair, task_answer).unwrap());
}

#[test]
fn wide_forwarder_is_never_fooled() {
    let p = params(1, 3, &[]);
    let proto = BitProtocol::new(p.clone(), 4, BitRule::Forward).unwrap();
    let fam = FoolingFamily::new(&p, 0, FamilyVary::AllTables).unwrap();
    assert_eq!(fam.len(), 27);
    let report = find_fooling_pair(&proto, &fam, task_answer).unwrap();
    assert_eq!(report.distinct_views, 27);
    assert!(report.pair.is_none());
    assert!(!report.guaranteed);
}

#[test]
fn pigeonhole_forces_a_pair() {
    // One epoch, two senders, two bits each: at most 16 views for 20
    // answers.
    let p = params(1, 20, &[]);
    for rule in [BitRule::Forward, BitRule::Hash { seed: 1 }, BitRule::Hash { seed: 2 }] {
        let proto = BitProtocol::new(p.clone(), 1, rule).unwrap();
        let fam = FoolingFamily::new(&p, 3, FamilyVary::QueriedEntry).unwrap();
        let report = find_fooling_pair(&proto, &fam, task_answer).unwrap();
        assert_eq!(report.view_bits, 4);
        assert!(report.guaranteed);
        let pair = report.pair.expect("guaranteed pair");
        assert_ne!(pair.first_answer, pair.second_answer);
        assert!(certify_pair(&proto, &fam, &pair, task_answer).unwrap());
    }
}

#[test]
fn tiny_transformer_pairs_replay() {
    let p = params(1, 2, &[]);
    let spec = random_decoder(&p, ModelDims::new(1, 1, 4, 1).unwrap(), 8).unwrap();
    let proto = TransformerProtocol::new(spec, p.clone()).unwrap();
    let fam = FoolingFamily::new(&p, 1, FamilyVary::AllTables).unwrap();
    let report = find_fooling_pair(&proto, &fam, task_answer).unwrap();
    assert!(!report.bits_only);
    assert!(!report.guaranteed);
    if let Some(pair) = &report.pair {
        assert!(certify_pair(&proto, &fam, pair, task_answer).unwrap());
    }
}
