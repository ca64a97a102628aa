//! Dense state-vector simulator.
//!
//! Gates act in place on amplitude pairs selected by bit stride; full matrices
//! are only built by [`circuit_unitary`]. Qubit 0 is the most significant bit
//! of a basis-state index.

mod circuit;
mod gate;
mod state;
mod unitary;

pub use circuit::{apply_circuit, apply_circuit_mut, Angle, CircuitBuilder, CircuitSpec, GateOp};
pub(crate) use circuit::{Action, CompiledOp};
pub use gate::{rot_matrix, rx_matrix, ry_matrix, rz_matrix, Gate, GateKind, Matrix2};
pub(crate) use gate::{dagger2, single_qubit_matrix};
pub use state::{StateVector, MAX_QUBITS};
pub use unitary::{circuit_unitary, UnitaryMatrix, MAX_UNITARY_DIM};
