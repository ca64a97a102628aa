use num_complex::Complex64;
use rayon::prelude::*;

use super::circuit::{apply_circuit_mut, CircuitSpec};
use super::state::StateVector;
use crate::error::{Error, Result};

/// Largest matrix dimension `circuit_unitary` will materialize (12 qubits).
pub const MAX_UNITARY_DIM: usize = 1 << 12;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl UnitaryMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = ONE;
        }
        Self { dim, entries }
    }

    /// Row-major entries; fails unless there are exactly `dim²` of them.
    pub fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Shape(format!(
                "{} entries for a {dim}×{dim} matrix",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn dagger(&self) -> Self {
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                entries[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        Self { dim: d, entries }
    }

    /// `self · other`
    pub fn matmul(&self, other: &UnitaryMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!("{} vs {} matrix product", self.dim, other.dim)));
        }
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        entries.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == ZERO {
                    continue;
                }
                let other_row = &other.entries[k * d..(k + 1) * d];
                for (out, b) in row.iter_mut().zip(other_row) {
                    *out += a * b;
                }
            }
        });
        Ok(Self { dim: d, entries })
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector of length {} against a {}-dim matrix",
                v.len(),
                self.dim
            )));
        }
        Ok(self
            .entries
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `self · state`
    pub fn apply_state(&self, state: &StateVector) -> Result<StateVector> {
        let out = self.apply(state.amplitudes())?;
        Ok(StateVector::from_raw(state.n_qubits(), out))
    }

    /// Largest elementwise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim;
        (0..d)
            .into_par_iter()
            .map(|i| {
                let mut worst: f64 = 0.0;
                for j in 0..d {
                    let mut acc = ZERO;
                    for k in 0..d {
                        acc += self.entries[k * d + i].conj() * self.entries[k * d + j];
                    }
                    let expect = if i == j { ONE } else { ZERO };
                    worst = worst.max((acc - expect).norm());
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    /// `self^power` by repeated squaring; `power = 0` gives the identity.
    pub fn pow(&self, power: usize) -> Result<Self> {
        let mut result = Self::identity(self.dim);
        let mut base = self.clone();
        let mut e = power;
        while e > 0 {
            if e & 1 == 1 {
                result = result.matmul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }

    pub fn max_abs_diff(&self, other: &UnitaryMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Matrix of `circuit` at `params`; column `j` is the circuit applied to `|j⟩`.
pub fn circuit_unitary(circuit: &CircuitSpec, params: &[f64]) -> Result<UnitaryMatrix> {
    circuit.check_params(params)?;
    let n = circuit.n_qubits();
    let dim = 1usize << n;
    if dim > MAX_UNITARY_DIM {
        return Err(Error::Capacity { dim, limit: MAX_UNITARY_DIM });
    }
    let columns = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut s = StateVector::basis(n, j)?;
            apply_circuit_mut(&mut s, circuit, params)?;
            Ok(s.into_amplitudes())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = vec![ZERO; dim * dim];
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            entries[i * dim + j] = *v;
        }
    }
    Ok(UnitaryMatrix { dim, entries })
}
