//! Constant-depth symmetric circuits and their compilation to encoders.
//!
//! Wires are numbered globally: `0..inputCount` are the input bits and the
//! gates follow in layer order, so gate `k` of the flattened gate list is
//! wire `inputCount + k`. A gate with fan-in `w` outputs `table[c]` where
//! `c` is the number of ones among its inputs.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

mod compile;

pub use compile::{
    check_transparency, circuit_tokens, compile, run_compiled, CompileOptions, CompileReport, CompiledCircuit,
    GatePlacement, LayerUsage, Location,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricGate {
    pub inputs: Vec<usize>,
    /// `table[c]` for `c ∈ 0..=fan-in`, each 0 or 1.
    pub table: Vec<u8>,
}

impl SymmetricGate {
    pub fn fan_in(&self) -> usize {
        self.inputs.len()
    }

    pub fn output(&self, ones: usize) -> bool {
        self.table[ones] == 1
    }

    /// Parity of the inputs.
    pub fn parity(inputs: Vec<usize>) -> Self {
        let table = (0..=inputs.len()).map(|c| (c % 2) as u8).collect();
        Self { inputs, table }
    }

    pub fn and(inputs: Vec<usize>) -> Self {
        let w = inputs.len();
        let table = (0..=w).map(|c| u8::from(c == w)).collect();
        Self { inputs, table }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricCircuit {
    #[serde(rename = "inputCount")]
    pub input_count: usize,
    pub layers: Vec<Vec<SymmetricGate>>,
    /// Output wire; defaults to the last gate of the top layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<usize>,
}

impl SymmetricCircuit {
    /// Parity of `n` bits as a single gate.
    pub fn parity(n: usize) -> Self {
        Self {
            input_count: n,
            layers: vec![vec![SymmetricGate::parity((0..n).collect())]],
            output: None,
        }
    }

    /// `Σ x_i·y_i mod 2` over inputs `x_1..x_k, y_1..y_k`: `k` AND gates
    /// followed by one parity gate.
    pub fn inner_product_mod2(k: usize) -> Self {
        let ands = (0..k).map(|i| SymmetricGate::and(vec![i, k + i])).collect();
        let parity = SymmetricGate::parity((2 * k..3 * k).collect());
        Self {
            input_count: 2 * k,
            layers: vec![ands, vec![parity]],
            output: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Total fan-in `s`.
    pub fn wires(&self) -> usize {
        self.layers.iter().flatten().map(SymmetricGate::fan_in).sum()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Wire id of gate `index` in layer `layer` (1-based layer).
    pub fn wire_of(&self, layer: usize, index: usize) -> usize {
        self.input_count + self.layers[..layer - 1].iter().map(Vec::len).sum::<usize>() + index
    }

    /// Layer producing a wire, 0 for inputs.
    pub fn layer_of(&self, wire: usize) -> Option<usize> {
        if wire < self.input_count {
            return Some(0);
        }
        let mut start = self.input_count;
        for (l, gates) in self.layers.iter().enumerate() {
            if wire < start + gates.len() {
                return Some(l + 1);
            }
            start += gates.len();
        }
        None
    }

    pub fn output_wire(&self) -> usize {
        self.output
            .unwrap_or_else(|| (self.input_count + self.gate_count()).saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_count == 0 {
            problems.push("inputCount must be at least 1".to_string());
        }
        if self.layers.is_empty() || self.layers.iter().any(Vec::is_empty) {
            problems.push("every layer needs at least one gate".to_string());
        }
        for (l, gates) in self.layers.iter().enumerate() {
            for (g, gate) in gates.iter().enumerate() {
                let name = format!("layer {} gate {g}", l + 1);
                if gate.inputs.is_empty() {
                    problems.push(format!("{name} has no inputs"));
                }
                if gate.table.len() != gate.fan_in() + 1 {
                    problems.push(format!(
                        "{name} has table length {}, expected {}",
                        gate.table.len(),
                        gate.fan_in() + 1
                    ));
                }
                if gate.table.iter().any(|&b| b > 1) {
                    problems.push(format!("{name} table entries must be 0 or 1"));
                }
                for &w in &gate.inputs {
                    match self.layer_of(w) {
                        Some(src) if src <= l => {}
                        Some(_) => problems.push(format!("{name} reads wire {w} from the same or a higher layer")),
                        None => problems.push(format!("{name} reads dangling wire {w}")),
                    }
                }
            }
        }
        if problems.is_empty() && self.layer_of(self.output_wire()) != Some(self.depth()) {
            problems.push(format!("output wire {} is not a top-layer gate", self.output_wire()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Values of every wire, inputs first.
pub fn eval_all(c: &SymmetricCircuit, x: &[bool]) -> Result<Vec<bool>> {
    c.validate()?;
    if x.len() != c.input_count {
        return Err(Error::InvalidParams(format!(
            "expected {} input bits, got {}",
            c.input_count,
            x.len()
        )));
    }
    let mut values = x.to_vec();
    for gates in &c.layers {
        let layer: Vec<bool> = gates
            .iter()
            .map(|g| g.output(g.inputs.iter().filter(|&&w| values[w]).count()))
            .collect();
        values.extend(layer);
    }
    Ok(values)
}

pub fn eval_circuit(c: &SymmetricCircuit, x: &[bool]) -> Result<bool> {
    Ok(eval_all(c, x)?[c.output_wire()])
}

/// Bits of `v`, least significant first.
pub fn bits_of(v: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| (v >> k) & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_of_three() {
        let c = SymmetricCircuit::parity(3);
        assert_eq!(c.layers[0][0].table, vec![0, 1, 0, 1]);
        assert!(!eval_circuit(&c, &[true, false, true]).unwrap());
    }

    #[test]
    fn and_and_constant_gates() {
        let and = SymmetricCircuit {
            input_count: 3,
            layers: vec![vec![SymmetricGate::and(vec![0, 1, 2])]],
            output: None,
        };
        assert!(eval_circuit(&and, &[true, true, true]).unwrap());
        let zero = SymmetricCircuit {
            input_count: 2,
            layers: vec![vec![SymmetricGate {
                inputs: vec![0, 1],
                table: vec![0, 0, 0],
            }]],
            output: None,
        };
        for v in 0..4 {
            assert!(!eval_circuit(&zero, &bits_of(v, 2)).unwrap());
        }
    }

    #[test]
    fn dangling_wires_are_rejected() {
        let c = SymmetricCircuit {
            input_count: 2,
            layers: vec![vec![SymmetricGate::parity(vec![0, 5])]],
            output: None,
        };
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        let same_layer = SymmetricCircuit {
            input_count: 1,
            layers: vec![vec![SymmetricGate::parity(vec![0]), SymmetricGate::parity(vec![1])]],
            output: None,
        };
        assert!(same_layer.validate().is_err());
    }
}
