//! Classical data → quantum states.
//!
//! Images are amplitude-embedded by writing normalized pixels straight into the
//! state; no state-preparation circuit is synthesized. Class labels are angle
//! embedded on an ancilla, which is always the last (highest-index) qubit.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qstate::{rx_matrix, StateVector};

/// An embedded image together with the Euclidean norm divided out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub state: StateVector,
    pub norm: f64,
}

pub fn amplitude_embed(pixels: &[f64], n_qubits: usize) -> Result<Embedded> {
    let dim = 1usize
        .checked_shl(n_qubits as u32)
        .filter(|_| n_qubits > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("bad qubit count {n_qubits}")))?;
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("no pixels to embed".into()));
    }
    if pixels.len() > dim {
        return Err(Error::TooManyFeatures { len: pixels.len(), n_qubits });
    }
    let norm = pixels.iter().map(|p| p * p).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("pixel norm".into()));
    }
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for (a, p) in amps.iter_mut().zip(pixels) {
        *a = Complex64::new(p / norm, 0.0);
    }
    let state = StateVector::normalized(amps)?;
    Ok(Embedded { state, norm })
}

/// `class_index · 2π / n_classes`
pub fn label_angle(class_index: usize, n_classes: usize) -> Result<f64> {
    if class_index >= n_classes {
        return Err(Error::ClassOutOfRange { index: class_index, n_classes });
    }
    Ok(class_index as f64 * TAU / n_classes as f64)
}

/// Image on qubits `0..n_image_qubits`, label ancilla `RX(angle)|0⟩` appended last.
pub fn embed_guided(
    pixels: &[f64],
    n_image_qubits: usize,
    class_index: usize,
    n_classes: usize,
) -> Result<Embedded> {
    let image = amplitude_embed(pixels, n_image_qubits)?;
    let m = rx_matrix(label_angle(class_index, n_classes)?);
    // RX|0⟩ is the first column
    let ancilla = StateVector::from_raw(1, vec![m[0][0], m[1][0]]);
    Ok(Embedded { state: image.state.tensor(&ancilla)?, norm: image.norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn basis_pixel_gives_basis_state() {
        let e = amplitude_embed(&[1.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(e.state, StateVector::zero(2).unwrap());
        assert_eq!(e.norm, 1.0);
    }

    #[test]
    fn three_four_five() {
        let e = amplitude_embed(&[3.0, 4.0], 1).unwrap();
        assert_eq!(e.norm, 5.0);
        let a = e.state.amplitudes();
        assert!((a[0].re - 0.6).abs() < 1e-15 && (a[1].re - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_padding_and_errors() {
        let e = amplitude_embed(&[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(e.state.amplitudes()[3], Complex64::new(0.0, 0.0));
        assert!(matches!(amplitude_embed(&[0.0; 4], 2), Err(Error::ZeroNorm)));
        assert!(matches!(amplitude_embed(&[1.0; 5], 2), Err(Error::TooManyFeatures { .. })));
        assert!(amplitude_embed(&[], 2).is_err());
    }

    #[test]
    fn label_angles() {
        assert_eq!(label_angle(0, 2).unwrap(), 0.0);
        assert!((label_angle(1, 2).unwrap() - PI).abs() < 1e-15);
        assert_eq!(label_angle(0, 7).unwrap(), 0.0);
        assert!((label_angle(3, 10).unwrap() - 3.0 * PI / 5.0).abs() < 1e-15);
        assert!(matches!(label_angle(2, 2), Err(Error::ClassOutOfRange { index: 2, n_classes: 2 })));
    }

    #[test]
    fn label_angle_injective() {
        for k in 1..20 {
            let angles: Vec<f64> = (0..k).map(|c| label_angle(c, k).unwrap()).collect();
            for w in angles.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn guided_class_zero_is_product_with_ket0() {
        let px = [0.2, 0.5, 0.1, 0.7];
        let g = embed_guided(&px, 2, 0, 2).unwrap();
        let plain = amplitude_embed(&px, 2).unwrap();
        let expected = plain.state.tensor(&StateVector::zero(1).unwrap()).unwrap();
        assert_eq!(g.state, expected);
    }

    #[test]
    fn guided_class_one_of_two_sets_ancilla() {
        let g = embed_guided(&[1.0, 0.0], 1, 1, 2).unwrap();
        // |0⟩ ⊗ RX(π)|0⟩ = -i |01⟩
        let a = g.state.amplitudes();
        assert!(a[0].norm() < 1e-15);
        assert!((a[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn guided_class_one_of_four() {
        let g = embed_guided(&[1.0, 0.0], 1, 1, 4).unwrap();
        let a = g.state.amplitudes();
        let h = (PI / 4.0).cos();
        assert!((a[0] - Complex64::new(h, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(0.0, -(PI / 4.0).sin())).norm() < 1e-15);
    }
}
