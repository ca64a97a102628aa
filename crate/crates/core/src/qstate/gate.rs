use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix2 = [[Complex64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    /// Z–Y–Z Euler rotation `RZ(a)·RY(b)·RZ(c)`; `RZ(c)` acts first.
    Rot,
    /// `targets = [control, target]`
    Cnot,
}

impl GateKind {
    pub fn n_angles(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz => 1,
            GateKind::Rot => 3,
            GateKind::Cnot => 0,
        }
    }

    pub fn n_targets(self) -> usize {
        match self {
            GateKind::Cnot => 2,
            _ => 1,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            GateKind::Rx => "RX",
            GateKind::Ry => "RY",
            GateKind::Rz => "RZ",
            GateKind::Rot => "ROT",
            GateKind::Cnot => "CNOT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "RX" => GateKind::Rx,
            "RY" => GateKind::Ry,
            "RZ" => GateKind::Rz,
            "ROT" => GateKind::Rot,
            "CNOT" => GateKind::Cnot,
            _ => return None,
        })
    }
}

/// A gate with concrete angles, ready to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub angles: Vec<f64>,
}

impl Gate {
    pub fn rx(q: usize, theta: f64) -> Self {
        Self { kind: GateKind::Rx, targets: vec![q], angles: vec![theta] }
    }

    pub fn ry(q: usize, theta: f64) -> Self {
        Self { kind: GateKind::Ry, targets: vec![q], angles: vec![theta] }
    }

    pub fn rz(q: usize, theta: f64) -> Self {
        Self { kind: GateKind::Rz, targets: vec![q], angles: vec![theta] }
    }

    pub fn rot(q: usize, a: f64, b: f64, c: f64) -> Self {
        Self { kind: GateKind::Rot, targets: vec![q], angles: vec![a, b, c] }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self { kind: GateKind::Cnot, targets: vec![control, target], angles: vec![] }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        validate_shape(self.kind, &self.targets, self.angles.len(), n_qubits)
    }

    /// 2×2 matrix of a single-qubit gate. Panics for CNOT.
    pub fn matrix(&self) -> Matrix2 {
        single_qubit_matrix(self.kind, &self.angles)
    }
}

pub(crate) fn validate_shape(
    kind: GateKind,
    targets: &[usize],
    n_angles: usize,
    n_qubits: usize,
) -> Result<()> {
    if targets.len() != kind.n_targets() {
        return Err(Error::InvalidGate(format!(
            "{} takes {} target(s), got {}",
            kind.mnemonic(),
            kind.n_targets(),
            targets.len()
        )));
    }
    if n_angles != kind.n_angles() {
        return Err(Error::InvalidGate(format!(
            "{} takes {} angle(s), got {}",
            kind.mnemonic(),
            kind.n_angles(),
            n_angles
        )));
    }
    if let Some(&index) = targets.iter().find(|&&q| q >= n_qubits) {
        return Err(Error::QubitOutOfRange { index, n_qubits });
    }
    if targets.len() == 2 && targets[0] == targets[1] {
        return Err(Error::InvalidGate(format!(
            "{} control and target coincide on qubit {}",
            kind.mnemonic(),
            targets[0]
        )));
    }
    Ok(())
}

pub fn rx_matrix(theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
        [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
    ]
}

pub fn ry_matrix(theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn rz_matrix(theta: f64) -> Matrix2 {
    let half = theta / 2.0;
    [
        [Complex64::from_polar(1.0, -half), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, half)],
    ]
}

/// `RZ(a)·RY(b)·RZ(c)` in closed form.
pub fn rot_matrix(a: f64, b: f64, c: f64) -> Matrix2 {
    let (s, co) = (b / 2.0).sin_cos();
    let plus = (a + c) / 2.0;
    let minus = (a - c) / 2.0;
    [
        [Complex64::from_polar(co, -plus), Complex64::from_polar(-s, -minus)],
        [Complex64::from_polar(s, minus), Complex64::from_polar(co, plus)],
    ]
}

pub(crate) fn single_qubit_matrix(kind: GateKind, angles: &[f64]) -> Matrix2 {
    match kind {
        GateKind::Rx => rx_matrix(angles[0]),
        GateKind::Ry => ry_matrix(angles[0]),
        GateKind::Rz => rz_matrix(angles[0]),
        GateKind::Rot => rot_matrix(angles[0], angles[1], angles[2]),
        GateKind::Cnot => panic!("CNOT has no single-qubit matrix"),
    }
}

#[cfg(test)]
pub(crate) fn matmul2(x: &Matrix2, y: &Matrix2) -> Matrix2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    out
}

pub(crate) fn dagger2(m: &Matrix2) -> Matrix2 {
    [
        [m[0][0].conj(), m[1][0].conj()],
        [m[0][1].conj(), m[1][1].conj()],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(x: &Matrix2, y: &Matrix2) -> bool {
        x.iter().flatten().zip(y.iter().flatten()).all(|(a, b)| (a - b).norm() < 1e-14)
    }

    #[test]
    fn rot_closed_form_matches_product() {
        for &(a, b, c) in &[(0.3, -1.2, 2.5), (3.0, 0.1, -0.7), (0.0, 0.0, 0.0)] {
            let product = matmul2(&rz_matrix(a), &matmul2(&ry_matrix(b), &rz_matrix(c)));
            assert!(close(&rot_matrix(a, b, c), &product));
        }
    }

    #[test]
    fn rotations_are_unitary() {
        for m in [rx_matrix(0.7), ry_matrix(-2.1), rz_matrix(1.3), rot_matrix(0.1, 0.2, 0.3)] {
            let id = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];
            assert!(close(&matmul2(&dagger2(&m), &m), &id));
        }
    }

    #[test]
    fn arity_checked() {
        let bad = Gate { kind: GateKind::Rot, targets: vec![0], angles: vec![0.1] };
        assert!(matches!(bad.validate(1), Err(Error::InvalidGate(_))));
        let bad = Gate { kind: GateKind::Cnot, targets: vec![0], angles: vec![] };
        assert!(bad.validate(2).is_err());
        assert!(Gate::cnot(0, 1).validate(2).is_ok());
    }
}
