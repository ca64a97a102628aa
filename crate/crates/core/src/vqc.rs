//! Strongly entangling layer stacks and measurement readout.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::qstate::{Angle, CircuitBuilder, CircuitSpec, Gate, GateKind, StateVector};

/// Trainable rotation angles per qubit per layer.
pub const ANGLES_PER_ROT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EntanglingStack {
    n_qubits: usize,
    n_layers: usize,
    /// Layer-major: `params[(layer * n_qubits + qubit) * 3 + j]`.
    params: Vec<f64>,
    reupload_points: BTreeSet<usize>,
}

impl EntanglingStack {
    pub fn new(
        n_qubits: usize,
        n_layers: usize,
        params: Vec<f64>,
        reupload_points: BTreeSet<usize>,
    ) -> Result<Self> {
        let expected = param_count(n_layers, n_qubits);
        if params.len() != expected {
            return Err(Error::ParamCount { expected, actual: params.len() });
        }
        if let Some(&p) = reupload_points.iter().find(|&&p| p >= n_layers) {
            return Err(Error::InvalidArgument(format!(
                "re-upload point {p} outside 0..{n_layers}"
            )));
        }
        Ok(Self { n_qubits, n_layers, params, reupload_points })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn reupload_points(&self) -> &BTreeSet<usize> {
        &self.reupload_points
    }
}

/// `n_layers × 3 × n_qubits`
pub fn param_count(n_layers: usize, n_qubits: usize) -> usize {
    n_layers * ANGLES_PER_ROT * n_qubits
}

/// Control–target distance of the CNOT ring in 1-based layer `layer`.
///
/// Cycles through `1..n_qubits` so no layer degenerates into self-targeting.
pub fn cnot_range(layer: usize, n_qubits: usize) -> usize {
    debug_assert!(layer >= 1 && n_qubits >= 2);
    (layer - 1) % (n_qubits - 1) + 1
}

/// `k` re-upload points spread evenly over `1..n_layers`.
pub fn uniform_reupload_points(n_reuploads: usize, n_layers: usize) -> Result<BTreeSet<usize>> {
    if n_reuploads == 0 {
        return Ok(BTreeSet::new());
    }
    if n_reuploads >= n_layers {
        return Err(Error::InvalidArgument(format!(
            "{n_reuploads} re-uploads do not fit between {n_layers} layers"
        )));
    }
    Ok((1..=n_reuploads).map(|i| i * n_layers / (n_reuploads + 1)).collect())
}

pub fn build_entangling_circuit(stack: &EntanglingStack) -> Result<CircuitSpec> {
    build_stack_circuit(stack.n_qubits, stack.n_layers, &BTreeSet::new(), None)
}

/// Entangling layers with a fixed gate inserted before each listed layer.
///
/// Used for data re-uploading: `reupload` is the gate re-applied at each point
/// in `reupload_points`.
pub fn build_stack_circuit(
    n_qubits: usize,
    n_layers: usize,
    reupload_points: &BTreeSet<usize>,
    reupload: Option<&Gate>,
) -> Result<CircuitSpec> {
    if n_qubits < 2 {
        return Err(Error::InvalidArgument(format!(
            "an entangling layer needs at least 2 qubits, got {n_qubits}"
        )));
    }
    let mut b = CircuitBuilder::new(n_qubits);
    for l in 0..n_layers {
        if let Some(g) = reupload.filter(|_| reupload_points.contains(&l)) {
            b.fixed(g);
        }
        for q in 0..n_qubits {
            b.push(GateKind::Rot, vec![q], vec![Angle::Param; ANGLES_PER_ROT]);
        }
        let r = cnot_range(l + 1, n_qubits);
        for q in 0..n_qubits {
            b.cnot(q, (q + r) % n_qubits);
        }
        b.end_layer();
    }
    b.build()
}

/// Marginal probabilities of the first `n_measured` qubits, all `2^n_measured` of them.
pub fn marginal_probabilities(state: &StateVector, n_measured: usize) -> Result<Vec<f64>> {
    let n = state.n_qubits();
    if n_measured == 0 || n_measured > n {
        return Err(Error::InvalidArgument(format!(
            "cannot measure {n_measured} of {n} qubits"
        )));
    }
    let group = 1usize << (n - n_measured);
    Ok(state
        .amplitudes()
        .chunks(group)
        .map(|c| c.iter().map(|a| a.norm_sqr()).sum())
        .collect())
}

/// Joint probabilities of the first `n_measured` qubits, truncated to
/// `n_outputs` and scaled by `input_norm`.
pub fn readout(
    state: &StateVector,
    n_measured: usize,
    n_outputs: usize,
    input_norm: f64,
) -> Result<Vec<f64>> {
    let probs = marginal_probabilities(state, n_measured)?;
    if n_outputs > probs.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_outputs} outputs exceed the {} measurable states",
            probs.len()
        )));
    }
    Ok(probs[..n_outputs].iter().map(|p| p * input_norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{amplitude_embed, embed_guided};
    use crate::qstate::apply_circuit;

    fn cnots(c: &CircuitSpec, layer: usize) -> Vec<(usize, usize)> {
        let start = if layer == 0 { 0 } else { c.layer_boundaries()[layer - 1] };
        c.ops()[start..c.layer_boundaries()[layer]]
            .iter()
            .filter(|o| o.kind == GateKind::Cnot)
            .map(|o| (o.targets[0], o.targets[1]))
            .collect()
    }

    fn stack(n: usize, l: usize) -> EntanglingStack {
        EntanglingStack::new(n, l, vec![0.0; param_count(l, n)], BTreeSet::new()).unwrap()
    }

    #[test]
    fn two_qubits_one_layer() {
        let c = build_entangling_circuit(&stack(2, 1)).unwrap();
        let kinds: Vec<_> = c.ops().iter().map(|o| o.kind).collect();
        assert_eq!(kinds, [GateKind::Rot, GateKind::Rot, GateKind::Cnot, GateKind::Cnot]);
        assert_eq!(cnots(&c, 0), [(0, 1), (1, 0)]);
    }

    #[test]
    fn four_qubits_second_layer_skips_one() {
        let c = build_entangling_circuit(&stack(4, 3)).unwrap();
        assert_eq!(cnots(&c, 0), [(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(cnots(&c, 1), [(0, 2), (1, 3), (2, 0), (3, 1)]);
        assert_eq!(cnots(&c, 2), [(0, 3), (1, 0), (2, 1), (3, 2)]);
    }

    #[test]
    fn range_cycles_past_n_minus_one() {
        assert_eq!(cnot_range(4, 4), 1);
        assert_eq!(cnot_range(5, 4), 2);
        assert_eq!(cnot_range(47, 7), 5);
    }

    #[test]
    fn counts_for_47_layers() {
        // oracle: count gates directly per layer
        let c = build_entangling_circuit(&stack(4, 47)).unwrap();
        let rots = c.ops().iter().filter(|o| o.kind == GateKind::Rot).count();
        let cx = c.ops().iter().filter(|o| o.kind == GateKind::Cnot).count();
        assert_eq!((rots, cx), (188, 188));
        assert_eq!(c.n_gates(), 376);
        assert_eq!(c.n_params(), 564);
        assert_eq!(c.n_layers(), 47);
    }

    #[test]
    fn stack_validation() {
        assert!(EntanglingStack::new(3, 2, vec![0.0; 17], BTreeSet::new()).is_err());
        assert!(EntanglingStack::new(3, 2, vec![0.0; 18], [2].into()).is_err());
        assert!(build_entangling_circuit(&stack(1, 2)).is_err());
    }

    #[test]
    fn reupload_points_are_spread() {
        assert_eq!(uniform_reupload_points(3, 47).unwrap(), [11, 23, 35].into());
        assert!(uniform_reupload_points(0, 5).unwrap().is_empty());
        assert!(uniform_reupload_points(5, 5).is_err());
    }

    #[test]
    fn reupload_gates_inserted_before_layers() {
        let g = Gate::rx(2, 1.0);
        let c = build_stack_circuit(3, 4, &[1, 3].into(), Some(&g)).unwrap();
        let rx: Vec<usize> = c.ops().iter().enumerate().filter(|(_, o)| o.kind == GateKind::Rx).map(|(i, _)| i).collect();
        assert_eq!(rx, [6, 19]);
        assert_eq!(c.n_params(), 36);
    }

    #[test]
    fn readout_of_fresh_embedding() {
        let x = [0.3, 0.1, 0.9, 0.4];
        let e = amplitude_embed(&x, 2).unwrap();
        let out = readout(&e.state, 2, 4, e.norm).unwrap();
        for (o, xi) in out.iter().zip(x) {
            assert!((o - xi * xi / e.norm).abs() < 1e-15);
        }
    }

    #[test]
    fn readout_basis() {
        let s = StateVector::zero(2).unwrap();
        assert_eq!(readout(&s, 2, 4, 1.0).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert!(readout(&s, 2, 5, 1.0).is_err());
        assert!(readout(&s, 3, 1, 1.0).is_err());
    }

    #[test]
    fn guided_marginal_sums_all_amplitudes() {
        let px: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 + 0.5).collect();
        let e = embed_guided(&px, 6, 1, 3).unwrap();
        let c = build_entangling_circuit(&stack(7, 2)).unwrap();
        let params: Vec<f64> = (0..c.n_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = apply_circuit(&e.state, &c, &params).unwrap();
        let out = readout(&s, 6, 64, e.norm).unwrap();
        // oracle: pair up ancilla-0 and ancilla-1 amplitudes by hand
        let a = s.amplitudes();
        for k in 0..64 {
            let expect = (a[2 * k].norm_sqr() + a[2 * k + 1].norm_sqr()) * e.norm;
            assert!((out[k] - expect).abs() < 1e-14);
        }
        let total: f64 = out.iter().sum();
        assert!((total - e.norm).abs() < 1e-9);
    }
}
