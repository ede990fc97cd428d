use seqcomp::circuits::{
    bits_of, check_transparency, compile, eval_circuit, run_compiled, CompileOptions, GatePlacement, SymmetricCircuit,
    SymmetricGate,
};
use seqcomp::Error;

fn exhaustive(c: &SymmetricCircuit, opts: &CompileOptions) {
    let compiled = compile(c, None, opts).unwrap();
    let n = c.input_count;
    let heads = (5 * c.wires()).div_ceil(n).max(1);
    assert!(compiled.report.depth <= 6 * c.depth());
    assert_eq!(compiled.report.heads_per_layer, heads);
    for v in 0..1u64 << n {
        let x = bits_of(v, n);
        assert_eq!(run_compiled(&compiled, &x).unwrap(), eval_circuit(c, &x).unwrap(), "input {v:b}");
        assert_eq!(check_transparency(c, &compiled, &x).unwrap(), Vec::<String>::new());
    }
}

#[test]
fn parity_of_four_is_one_layer_of_six() {
    let c = SymmetricCircuit::parity(4);
    let compiled = compile(&c, None, &CompileOptions::default()).unwrap();
    assert_eq!(compiled.report.depth, 6);
    exhaustive(&c, &CompileOptions::default());
}

#[test]
fn parity_up_to_eight() {
    for n in 1..=8 {
        exhaustive(&SymmetricCircuit::parity(n), &CompileOptions::default());
    }
}

#[test]
fn inner_product_of_three_pairs() {
    let c = SymmetricCircuit::inner_product_mod2(3);
    assert_eq!(c.gate_count(), 4);
    let compiled = compile(&c, None, &CompileOptions::default()).unwrap();
    assert_eq!(compiled.report.depth, 12);
    exhaustive(&c, &CompileOptions::default());
}

#[test]
fn identity_gate_passes_its_wire() {
    let c = SymmetricCircuit {
        input_count: 3,
        layers: vec![vec![SymmetricGate {
            inputs: vec![1],
            table: vec![0, 1],
        }]],
        output: None,
    };
    let compiled = compile(&c, None, &CompileOptions::default()).unwrap();
    for v in 0..8 {
        let x = bits_of(v, 3);
        assert_eq!(run_compiled(&compiled, &x).unwrap(), x[1]);
    }
}

/// Many inputs, one wide gate: fan-in exceeds `H`, so the gate is spread.
fn wide_majority() -> SymmetricCircuit {
    let n = 12;
    let table = (0..=n).map(|c| u8::from(c * 2 > n)).collect();
    let mut c = SymmetricCircuit {
        input_count: n,
        layers: vec![vec![SymmetricGate {
            inputs: (0..n).collect(),
            table,
        }]],
        output: None,
    };
    // Spare inputs lower H = ceil(5s/n) below the fan-in.
    c.input_count = 40;
    c
}

#[test]
fn spread_gates_and_padding_do_not_change_outputs() {
    let c = wide_majority();
    let plain = compile(&c, None, &CompileOptions::default()).unwrap();
    let padded = compile(
        &c,
        None,
        &CompileOptions {
            extra_padding: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let GatePlacement::Spread { positions, .. } = &plain.report.packing[0] else {
        panic!("expected a spread gate");
    };
    let GatePlacement::Spread { positions: more, .. } = &padded.report.packing[0] else {
        panic!("expected a spread gate");
    };
    assert_eq!(more.len(), positions.len() + 1);
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..200 {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let x = bits_of(rng >> 20, 40);
        let want = eval_circuit(&c, &x).unwrap();
        assert_eq!(run_compiled(&plain, &x).unwrap(), want);
        assert_eq!(run_compiled(&padded, &x).unwrap(), want);
        assert!(check_transparency(&c, &plain, &x).unwrap().is_empty());
    }
}

#[test]
fn skip_layer_wires_stay_available() {
    // Layer 2 reads an input bit directly as well as a layer-1 gate.
    let c = SymmetricCircuit {
        input_count: 3,
        layers: vec![
            vec![SymmetricGate::and(vec![0, 1])],
            vec![SymmetricGate::parity(vec![3, 2, 0])],
        ],
        output: None,
    };
    exhaustive(&c, &CompileOptions::default());
}

#[test]
fn pinned_positions_that_do_not_fit_are_refused() {
    let c = wide_majority();
    let err = compile(
        &c,
        None,
        &CompileOptions {
            positions: Some(40),
            extra_padding: 30,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Capacity(_)), "{err}");
}
