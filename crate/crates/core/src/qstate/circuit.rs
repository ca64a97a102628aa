use std::fmt::Write as _;

use super::gate::{single_qubit_matrix, validate_shape, Gate, GateKind, Matrix2};
use super::state::{check_qubit_count, StateVector};
use crate::error::{Error, Result};

/// An angle slot in a circuit template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Angle {
    /// Bound from the flat parameter vector, in order of appearance.
    Param,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub angles: Vec<Angle>,
}

impl GateOp {
    pub fn n_params(&self) -> usize {
        self.angles.iter().filter(|a| matches!(a, Angle::Param)).count()
    }

    /// Resolves angle slots, consuming parameters from `params` starting at `*cursor`.
    fn bind_angles(&self, params: &[f64], cursor: &mut usize, out: &mut [f64; 3]) {
        for (slot, angle) in out.iter_mut().zip(&self.angles) {
            *slot = match angle {
                Angle::Param => {
                    let v = params[*cursor];
                    *cursor += 1;
                    v
                }
                Angle::Fixed(v) => *v,
            };
        }
    }
}

/// An ordered gate list over `n_qubits`, partitioned into layers.
///
/// `layer_boundaries` holds the exclusive end index of every layer, so it is
/// strictly increasing and its last entry equals the gate count.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    n_qubits: usize,
    ops: Vec<GateOp>,
    layer_boundaries: Vec<usize>,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, ops: Vec<GateOp>, layer_boundaries: Vec<usize>) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        for (i, op) in ops.iter().enumerate() {
            validate_shape(op.kind, &op.targets, op.angles.len(), n_qubits).map_err(|e| {
                Error::InvalidCircuit(format!("gate {i}: {e}"))
            })?;
        }
        let mut prev = 0;
        for &b in &layer_boundaries {
            if b <= prev {
                return Err(Error::InvalidCircuit(format!(
                    "layer boundaries must be strictly increasing, got {layer_boundaries:?}"
                )));
            }
            prev = b;
        }
        if prev != ops.len() {
            return Err(Error::InvalidCircuit(format!(
                "layer boundaries end at {prev} but the circuit has {} gates",
                ops.len()
            )));
        }
        Ok(Self { n_qubits, ops, layer_boundaries })
    }

    pub fn empty(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, Vec::new(), Vec::new())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }

    pub fn layer_boundaries(&self) -> &[usize] {
        &self.layer_boundaries
    }

    pub fn n_layers(&self) -> usize {
        self.layer_boundaries.len()
    }

    pub fn n_gates(&self) -> usize {
        self.ops.len()
    }

    pub fn n_params(&self) -> usize {
        self.ops.iter().map(GateOp::n_params).sum()
    }

    /// `self` followed by `other`, with parameters of `other` appended after ours.
    pub fn concat(&self, other: &CircuitSpec) -> Result<CircuitSpec> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::InvalidCircuit(format!(
                "cannot concatenate {}-qubit and {}-qubit circuits",
                self.n_qubits, other.n_qubits
            )));
        }
        let offset = self.ops.len();
        let mut ops = self.ops.clone();
        ops.extend(other.ops.iter().cloned());
        let mut bounds = self.layer_boundaries.clone();
        bounds.extend(other.layer_boundaries.iter().map(|b| b + offset));
        Self::new(self.n_qubits, ops, bounds)
    }

    /// Binds parameters into concrete gates.
    pub fn bind(&self, params: &[f64]) -> Result<Vec<Gate>> {
        self.check_params(params)?;
        let mut cursor = 0;
        Ok(self
            .ops
            .iter()
            .map(|op| {
                let mut buf = [0.0; 3];
                op.bind_angles(params, &mut cursor, &mut buf);
                Gate {
                    kind: op.kind,
                    targets: op.targets.clone(),
                    angles: buf[..op.angles.len()].to_vec(),
                }
            })
            .collect())
    }

    pub(crate) fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.n_params();
        if params.len() != expected {
            return Err(Error::ParamCount { expected, actual: params.len() });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Shape(format!(
                "{}-qubit circuit applied to a {}-qubit state",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        Ok(())
    }

    /// Compiled form: per-op matrices plus, for each op, the index of its first parameter.
    pub(crate) fn compile(&self, params: &[f64]) -> Vec<CompiledOp> {
        let mut cursor = 0;
        self.ops
            .iter()
            .map(|op| {
                let first_param = cursor;
                let mut buf = [0.0; 3];
                op.bind_angles(params, &mut cursor, &mut buf);
                let action = match op.kind {
                    GateKind::Cnot => Action::Cnot(op.targets[0], op.targets[1]),
                    kind => Action::Single(op.targets[0], single_qubit_matrix(kind, &buf[..op.angles.len()])),
                };
                CompiledOp { action, first_param, angles: buf }
            })
            .collect()
    }

    /// Parses the line-oriented text form; see `docs/circuit-format.md`.
    pub fn parse(text: &str) -> Result<CircuitSpec> {
        let mut n_qubits = None;
        let mut ops = Vec::new();
        let mut bounds: Vec<usize> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |reason: String| Error::CircuitText { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "qubits" => {
                    if n_qubits.is_some() {
                        return Err(err("duplicate `qubits` header".into()));
                    }
                    if tokens.len() != 2 {
                        return Err(err("expected `qubits N`".into()));
                    }
                    let n: usize = tokens[1]
                        .parse()
                        .map_err(|_| err(format!("bad qubit count `{}`", tokens[1])))?;
                    n_qubits = Some(n);
                }
                "LAYER" => {
                    if tokens.len() != 1 {
                        return Err(err("`LAYER` takes no arguments".into()));
                    }
                    if bounds.last().copied().unwrap_or(0) < ops.len() {
                        bounds.push(ops.len());
                    }
                }
                mnemonic => {
                    if n_qubits.is_none() {
                        return Err(err("gate before `qubits` header".into()));
                    }
                    let kind = GateKind::from_mnemonic(mnemonic)
                        .ok_or_else(|| err(format!("unknown gate `{mnemonic}`")))?;
                    let n_t = kind.n_targets();
                    let want = 1 + n_t + kind.n_angles();
                    if tokens.len() != want {
                        return Err(err(format!(
                            "{mnemonic} expects {} arguments, got {}",
                            want - 1,
                            tokens.len() - 1
                        )));
                    }
                    let targets = tokens[1..=n_t]
                        .iter()
                        .map(|t| t.parse::<usize>().map_err(|_| err(format!("bad qubit index `{t}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    let angles = tokens[1 + n_t..]
                        .iter()
                        .map(|t| {
                            if *t == "p" {
                                Ok(Angle::Param)
                            } else {
                                t.parse::<f64>()
                                    .ok()
                                    .filter(|v| v.is_finite())
                                    .map(Angle::Fixed)
                                    .ok_or_else(|| err(format!("bad angle `{t}`")))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ops.push(GateOp { kind, targets, angles });
                }
            }
        }
        let n_qubits = n_qubits.ok_or(Error::CircuitText { line: 0, reason: "missing `qubits` header".into() })?;
        if bounds.last().copied().unwrap_or(0) < ops.len() {
            bounds.push(ops.len());
        }
        CircuitSpec::new(n_qubits, ops, bounds)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("qubits {}\n", self.n_qubits);
        let mut start = 0;
        for (li, &end) in self.layer_boundaries.iter().enumerate() {
            if li > 0 {
                out.push_str("LAYER\n");
            }
            for op in &self.ops[start..end] {
                out.push_str(op.kind.mnemonic());
                for t in &op.targets {
                    let _ = write!(out, " {t}");
                }
                for a in &op.angles {
                    match a {
                        Angle::Param => out.push_str(" p"),
                        Angle::Fixed(v) => {
                            let _ = write!(out, " {v:?}");
                        }
                    }
                }
                out.push('\n');
            }
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Action {
    Single(usize, Matrix2),
    Cnot(usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CompiledOp {
    pub action: Action,
    pub first_param: usize,
    pub angles: [f64; 3],
}

impl CompiledOp {
    pub fn apply(&self, state: &mut StateVector) {
        match self.action {
            Action::Single(q, ref m) => state.apply_single(q, m),
            Action::Cnot(c, t) => state.apply_cnot(c, t),
        }
    }
}

/// Collects gates into layers.
#[derive(Debug, Clone)]
pub struct CircuitBuilder {
    n_qubits: usize,
    ops: Vec<GateOp>,
    bounds: Vec<usize>,
}

impl CircuitBuilder {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, ops: Vec::new(), bounds: Vec::new() }
    }

    pub fn push(&mut self, kind: GateKind, targets: Vec<usize>, angles: Vec<Angle>) -> &mut Self {
        self.ops.push(GateOp { kind, targets, angles });
        self
    }

    pub fn rot_param(&mut self, q: usize) -> &mut Self {
        self.push(GateKind::Rot, vec![q], vec![Angle::Param; 3])
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> &mut Self {
        self.push(GateKind::Cnot, vec![control, target], vec![])
    }

    pub fn fixed(&mut self, gate: &Gate) -> &mut Self {
        let angles = gate.angles.iter().map(|&a| Angle::Fixed(a)).collect();
        self.push(gate.kind, gate.targets.clone(), angles)
    }

    pub fn end_layer(&mut self) -> &mut Self {
        if self.bounds.last().copied().unwrap_or(0) < self.ops.len() {
            self.bounds.push(self.ops.len());
        }
        self
    }

    pub fn build(mut self) -> Result<CircuitSpec> {
        self.end_layer();
        CircuitSpec::new(self.n_qubits, self.ops, self.bounds)
    }
}

/// Runs `circuit` with `params` on a copy of `state`.
pub fn apply_circuit(state: &StateVector, circuit: &CircuitSpec, params: &[f64]) -> Result<StateVector> {
    let mut out = state.clone();
    apply_circuit_mut(&mut out, circuit, params)?;
    Ok(out)
}

pub fn apply_circuit_mut(state: &mut StateVector, circuit: &CircuitSpec, params: &[f64]) -> Result<()> {
    circuit.check_params(params)?;
    circuit.check_state(state)?;
    for op in circuit.compile(params) {
        op.apply(state);
    }
    Ok(())
}
