//! Circuit gradients and the Adam optimizer.
//!
//! [`circuit_vjp`] pulls a cotangent on a circuit's final state back to the
//! circuit parameters. The default [`GradMethod::ParameterShift`] re-runs the
//! circuit with each rotation angle shifted (the hardware-compatible rule);
//! [`GradMethod::Adjoint`] walks the circuit backwards once and is used where
//! input gradients are needed as well.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{dagger2, single_qubit_matrix, Action, CircuitSpec, CompiledOp, GateKind, Matrix2, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    #[default]
    ParameterShift,
    Adjoint,
}

/// Linearization of a loss around the circuit's final state `φ`.
#[derive(Debug, Clone)]
pub enum Cotangent {
    /// `∂L/∂|φ_i|²` per basis state; the loss depends on the state only
    /// through measurement probabilities.
    Probabilities(Vec<f64>),
    /// `∂L/∂φ̄_i`, for losses on the raw amplitudes.
    Amplitudes(Vec<Complex64>),
}

impl Cotangent {
    fn len(&self) -> usize {
        match self {
            Cotangent::Probabilities(w) => w.len(),
            Cotangent::Amplitudes(l) => l.len(),
        }
    }

    fn lambda(&self, phi: &[Complex64]) -> Vec<Complex64> {
        match self {
            Cotangent::Probabilities(w) => phi.iter().zip(w).map(|(a, w)| a * w).collect(),
            Cotangent::Amplitudes(l) => l.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitVjp {
    pub params: Vec<f64>,
    /// `∂L/∂ψ̄` of the input state, when requested.
    pub input: Option<Vec<Complex64>>,
}

/// Pulls `cotangent` (taken at `circuit(input)`) back to the parameters and,
/// if `want_input` is set, to the input state.
pub fn circuit_vjp(
    circuit: &CircuitSpec,
    params: &[f64],
    input: &StateVector,
    cotangent: &Cotangent,
    method: GradMethod,
    want_input: bool,
) -> Result<CircuitVjp> {
    circuit.check_params(params)?;
    circuit.check_state(input)?;
    if cotangent.len() != input.dim() {
        return Err(Error::Shape(format!(
            "cotangent of length {} for a {}-dim state",
            cotangent.len(),
            input.dim()
        )));
    }
    let ops = circuit.compile(params);
    match method {
        GradMethod::Adjoint => adjoint(circuit, &ops, input, cotangent, want_input),
        GradMethod::ParameterShift => {
            let grads = shift_grads(circuit, &ops, input, cotangent);
            let input_grad = if want_input {
                adjoint(circuit, &ops, input, cotangent, true)?.input
            } else {
                None
            };
            Ok(CircuitVjp { params: grads, input: input_grad })
        }
    }
}

fn param_slots(circuit: &CircuitSpec, ops: &[CompiledOp]) -> Vec<(usize, usize)> {
    // (op index, angle index) for every trainable angle, in parameter order
    let mut slots = Vec::with_capacity(circuit.n_params());
    for (g, op) in circuit.ops().iter().enumerate() {
        for (j, a) in op.angles.iter().enumerate() {
            if matches!(a, crate::qstate::Angle::Param) {
                slots.push((g, j));
            }
        }
    }
    debug_assert!(slots.iter().all(|&(g, _)| g < ops.len()));
    slots
}

fn shifted_matrix(kind: GateKind, op: &CompiledOp, angle: usize, shift: f64, n_angles: usize) -> Matrix2 {
    let mut a = op.angles;
    a[angle] += shift;
    single_qubit_matrix(kind, &a[..n_angles])
}

fn shift_grads(circuit: &CircuitSpec, ops: &[CompiledOp], input: &StateVector, cot: &Cotangent) -> Vec<f64> {
    let slots = param_slots(circuit, ops);
    if slots.is_empty() {
        return Vec::new();
    }
    // state entering each op that carries parameters
    let mut prefixes: Vec<Option<StateVector>> = vec![None; ops.len()];
    let mut psi = input.clone();
    for (g, op) in ops.iter().enumerate() {
        if circuit.ops()[g].n_params() > 0 {
            prefixes[g] = Some(psi.clone());
        }
        op.apply(&mut psi);
    }
    let lambda = match cot {
        Cotangent::Amplitudes(_) => Some(cot.lambda(psi.amplitudes())),
        Cotangent::Probabilities(_) => None,
    };
    let (shift, scale) = match cot {
        // measurement probabilities have frequency 1 in each angle
        Cotangent::Probabilities(_) => (FRAC_PI_2, 0.5),
        // amplitudes have frequency 1/2: dφ/dθ = (φ(θ+π) − φ(θ−π))/4
        Cotangent::Amplitudes(_) => (PI, 0.5),
    };
    let run = |g: usize, j: usize, s: f64| -> StateVector {
        let spec = &circuit.ops()[g];
        let mut st = prefixes[g].clone().expect("prefix recorded for parameterized op");
        let m = shifted_matrix(spec.kind, &ops[g], j, s, spec.angles.len());
        st.apply_single(spec.targets[0], &m);
        for op in &ops[g + 1..] {
            op.apply(&mut st);
        }
        st
    };
    slots
        .par_iter()
        .map(|&(g, j)| {
            let plus = run(g, j, shift);
            let minus = run(g, j, -shift);
            match (cot, &lambda) {
                (Cotangent::Probabilities(w), _) => {
                    let f = |s: &StateVector| -> f64 {
                        s.amplitudes().iter().zip(w).map(|(a, w)| a.norm_sqr() * w).sum()
                    };
                    scale * (f(&plus) - f(&minus))
                }
                (Cotangent::Amplitudes(_), Some(l)) => {
                    let dot: Complex64 = l
                        .iter()
                        .zip(plus.amplitudes().iter().zip(minus.amplitudes()))
                        .map(|(l, (p, m))| l.conj() * (p - m))
                        .sum();
                    scale * dot.re
                }
                _ => unreachable!(),
            }
        })
        .collect()
}

fn adjoint(
    circuit: &CircuitSpec,
    ops: &[CompiledOp],
    input: &StateVector,
    cot: &Cotangent,
    want_input: bool,
) -> Result<CircuitVjp> {
    let mut psi = input.clone();
    for op in ops {
        op.apply(&mut psi);
    }
    let n = psi.n_qubits();
    let mut lambda = StateVector::from_raw(n, cot.lambda(psi.amplitudes()));
    let mut grads = vec![0.0; circuit.n_params()];
    for (g, op) in ops.iter().enumerate().rev() {
        let spec = &circuit.ops()[g];
        match op.action {
            Action::Single(q, m) => {
                let inv = dagger2(&m);
                psi.apply_single(q, &inv);
                let mut p = op.first_param;
                for (j, a) in spec.angles.iter().enumerate() {
                    if matches!(a, crate::qstate::Angle::Param) {
                        // dG/dθ = G(θ + π)/2, and dL/dθ = 2 Re⟨λ|dG/dθ ψ⟩
                        let shifted = shifted_matrix(spec.kind, op, j, PI, spec.angles.len());
                        grads[p] = braket_single(lambda.amplitudes(), psi.amplitudes(), n, q, &shifted).re;
                        p += 1;
                    }
                }
                lambda.apply_single(q, &inv);
            }
            Action::Cnot(c, t) => {
                psi.apply_cnot(c, t);
                lambda.apply_cnot(c, t);
            }
        }
    }
    Ok(CircuitVjp { params: grads, input: want_input.then(|| lambda.into_amplitudes()) })
}

/// `⟨l| M_q |s⟩` for a single-qubit matrix on qubit `q`.
fn braket_single(l: &[Complex64], s: &[Complex64], n_qubits: usize, q: usize, m: &Matrix2) -> Complex64 {
    let stride = 1usize << (n_qubits - 1 - q);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut base = 0;
    while base < s.len() {
        for i in base..base + stride {
            let (a, b) = (s[i], s[i + stride]);
            acc += l[i].conj() * (m[0][0] * a + m[0][1] * b);
            acc += l[i + stride].conj() * (m[1][0] * a + m[1][1] * b);
        }
        base += 2 * stride;
    }
    acc
}

/// A differentiable scalar loss of a flat parameter vector.
pub trait Objective: Sync {
    fn n_params(&self) -> usize;
    fn loss(&self, params: &[f64]) -> Result<f64>;
    fn loss_and_grad(&self, params: &[f64], method: GradMethod) -> Result<(f64, Vec<f64>)>;
}

/// Loss over the scaled, truncated readout of a single circuit run.
///
/// `loss_fn` maps the readout vector to `(loss, ∂loss/∂readout)`.
pub struct ReadoutObjective<'a, F> {
    pub circuit: &'a CircuitSpec,
    pub input: &'a StateVector,
    pub n_measured: usize,
    pub n_outputs: usize,
    pub scale: f64,
    pub loss_fn: F,
}

impl<F> ReadoutObjective<'_, F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn outputs(&self, params: &[f64]) -> Result<(StateVector, Vec<f64>)> {
        let s = crate::qstate::apply_circuit(self.input, self.circuit, params)?;
        let out = crate::vqc::readout(&s, self.n_measured, self.n_outputs, self.scale)?;
        Ok((s, out))
    }
}

impl<F> Objective for ReadoutObjective<'_, F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn n_params(&self) -> usize {
        self.circuit.n_params()
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        let (_, out) = self.outputs(params)?;
        Ok((self.loss_fn)(&out).0)
    }

    fn loss_and_grad(&self, params: &[f64], method: GradMethod) -> Result<(f64, Vec<f64>)> {
        let (_, out) = self.outputs(params)?;
        let (loss, d_out) = (self.loss_fn)(&out);
        let weights = readout_weights(self.input.n_qubits(), self.n_measured, &d_out, self.scale);
        let vjp = circuit_vjp(self.circuit, params, self.input, &Cotangent::Probabilities(weights), method, false)?;
        Ok((loss, vjp.params))
    }
}

/// Spreads `∂L/∂readout` over basis states: every amplitude in a measured
/// outcome's group gets that outcome's weight times `scale`.
pub fn readout_weights(n_qubits: usize, n_measured: usize, d_out: &[f64], scale: f64) -> Vec<f64> {
    let group = 1usize << (n_qubits - n_measured);
    let dim = 1usize << n_qubits;
    let mut w = vec![0.0; dim];
    for (k, d) in d_out.iter().enumerate() {
        for v in &mut w[k * group..(k + 1) * group] {
            *v = d * scale;
        }
    }
    w
}

pub fn parameter_shift_grad<O: Objective + ?Sized>(objective: &O, store: &ParamStore) -> Result<Vec<f64>> {
    Ok(objective.loss_and_grad(&store.values, GradMethod::ParameterShift)?.1)
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(loss_fn: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
    }
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut p = params.to_vec();
            p[i] = params[i] + h;
            let up = loss_fn(&p)?;
            p[i] = params[i] - h;
            let down = loss_fn(&p)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Interval trainable angles are wrapped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Wrap {
    /// `[−π, π)`; leaves measurement probabilities unchanged.
    #[default]
    Pi,
    /// `[−2π, 2π)`; the period of a rotation matrix, so amplitudes (and their
    /// global phase) are unchanged too.
    TwoPi,
}

impl Wrap {
    pub fn apply(self, x: f64) -> f64 {
        let half = match self {
            Wrap::Pi => PI,
            Wrap::TwoPi => TAU,
        };
        let period = 2.0 * half;
        if (-half..half).contains(&x) {
            return x;
        }
        let y = x - period * ((x + half) / period).floor();
        // floor rounding can land exactly on +half
        if y >= half {
            y - period
        } else {
            y
        }
    }
}

/// Wraps every value modulo 2π into `[−π, π)`.
pub fn remap(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| Wrap::Pi.apply(v)).collect()
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Trainable angles with Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
    pub wrap: Wrap,
}

impl ParamStore {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        Self { values, adam_m: vec![0.0; n], adam_v: vec![0.0; n], step_count: 0, wrap: Wrap::Pi }
    }

    pub fn with_wrap(mut self, wrap: Wrap) -> Self {
        self.wrap = wrap;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One Adam update followed by angle wrapping.
    pub fn adam_step(&self, grad: &[f64], lr: f64) -> Result<ParamStore> {
        let mut next = self.clone();
        next.adam_step_mut(grad, lr)?;
        Ok(next)
    }

    pub fn adam_step_mut(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::ParamCount { expected: self.values.len(), actual: grad.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..grad.len() {
            let g = grad[i];
            self.adam_m[i] = ADAM_BETA1 * self.adam_m[i] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[i] = ADAM_BETA2 * self.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            let v = self.values[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            self.values[i] = self.wrap.apply(v);
        }
        Ok(())
    }
}

/// Adam step as a free function over a store.
pub fn adam_step(store: &ParamStore, grad: &[f64], lr: f64) -> Result<ParamStore> {
    store.adam_step(grad, lr)
}
