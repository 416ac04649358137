//! Classical-feature encoders: amplitude encoding (the pipeline path,
//! 256 features → 8 qubits) and per-feature qubit encoding.
//!
//! Feature i maps to basis index i under the simulator's MSB-first qubit
//! ordering; both encoders write the statevector directly.

use crate::gates::C;
use crate::sim::{StateVector, MAX_QUBITS};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 256;

/// |ψ(x)⟩ = (1/‖x‖) Σ_i x_i |i⟩ for a power-of-two-length vector.
pub fn amplitude_encode(x: &[f64]) -> Result<StateVector> {
    let len = x.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Shape(format!(
            "amplitude encoding needs a power-of-two length ≥ 2, got {len}"
        )));
    }
    let n = len.trailing_zeros() as usize;
    if n > MAX_QUBITS {
        return Err(Error::Domain(format!("{n} qubits exceeds simulator cap")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::Domain("cannot amplitude-encode a zero vector".into()));
    }
    let amps: Vec<C> = x.iter().map(|&v| C::new(v / norm, 0.0)).collect();
    StateVector::from_amplitudes(n, amps)
}

/// Product-state encoding ⊗_i (cos(x_i/2)|0⟩ + sin(x_i/2)|1⟩), one qubit
/// per feature; x_i must lie in [0, π).
pub fn qubit_encode(x: &[f64]) -> Result<StateVector> {
    let n = x.len();
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::Domain(format!(
            "qubit encoding supports 1..={MAX_QUBITS} features, got {n}"
        )));
    }
    for &v in x {
        if !(0.0..std::f64::consts::PI).contains(&v) {
            return Err(Error::Domain(format!(
                "qubit-encoded feature {v} outside [0, π)"
            )));
        }
    }
    let cos: Vec<f64> = x.iter().map(|v| (v / 2.0).cos()).collect();
    let sin: Vec<f64> = x.iter().map(|v| (v / 2.0).sin()).collect();
    let mut amps = Vec::with_capacity(1 << n);
    for idx in 0..1usize << n {
        let mut a = 1.0;
        for (i, (&c, &s)) in cos.iter().zip(&sin).enumerate() {
            let bit = (idx >> (n - 1 - i)) & 1;
            a *= if bit == 0 { c } else { s };
        }
        amps.push(C::new(a, 0.0));
    }
    StateVector::from_amplitudes(n, amps)
}

/// Pad a ≤256-dimensional feature vector with zeros to length 256; an
/// (effectively) all-zero vector falls back to the unit vector on index 0
/// so degenerate frozen-CNN outputs cannot crash encoding.
pub fn prepare_features(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() > FEATURE_DIM {
        return Err(Error::Shape(format!(
            "expected at most {FEATURE_DIM} features, got {}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    let mut out = vec![0.0; FEATURE_DIM];
    out[..raw.len()].copy_from_slice(raw);
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        out.fill(0.0);
        out[0] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vector_maps_to_basis_state() {
        let mut x = vec![0.0; 4];
        x[0] = 1.0;
        let sv = amplitude_encode(&x).unwrap();
        assert!((sv.amplitudes()[0].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_four_five_normalization() {
        let mut x = vec![0.0; 8];
        x[0] = 3.0;
        x[1] = 4.0;
        let sv = amplitude_encode(&x).unwrap();
        assert!((sv.amplitudes()[0].re - 0.6).abs() < 1e-15);
        assert!((sv.amplitudes()[1].re - 0.8).abs() < 1e-15);
    }

    #[test]
    fn uniform_256_gives_one_sixteenth_amplitudes() {
        let x = vec![1.0; 256];
        let sv = amplitude_encode(&x).unwrap();
        for a in sv.amplitudes() {
            assert!((a.re - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_invariance() {
        let x: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.3).collect();
        let a = amplitude_encode(&x).unwrap();
        let b = amplitude_encode(&scaled).unwrap();
        for (u, v) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((u - v).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_zero_and_odd_lengths() {
        assert!(amplitude_encode(&[0.0; 8]).is_err());
        assert!(amplitude_encode(&[1.0; 6]).is_err());
    }

    #[test]
    fn qubit_encode_zero_features() {
        let sv = qubit_encode(&[0.0, 0.0, 0.0]).unwrap();
        assert!((sv.amplitudes()[0].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qubit_encode_single_half_pi() {
        let sv = qubit_encode(&[std::f64::consts::FRAC_PI_2]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((sv.amplitudes()[0].re - s).abs() < 1e-12);
        assert!((sv.amplitudes()[1].re - s).abs() < 1e-12);
    }

    #[test]
    fn qubit_encode_two_features_tensor_product() {
        // x = (π/2, 0) → (|00⟩ + |10⟩)/√2: qubit 0 in superposition
        let sv = qubit_encode(&[std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = sv.amplitudes();
        assert!((a[0].re - s).abs() < 1e-12);
        assert!((a[2].re - s).abs() < 1e-12);
        assert!(a[1].norm() < 1e-12 && a[3].norm() < 1e-12);
    }

    #[test]
    fn qubit_encode_is_product_state() {
        let x = [0.3, 1.1, 2.2];
        let sv = qubit_encode(&x).unwrap();
        // pairwise joint probabilities factorize
        let joint = |qi: usize, qj: usize| -> f64 {
            sv.amplitudes()
                .iter()
                .enumerate()
                .filter(|(idx, _)| (idx >> (2 - qi)) & 1 == 1 && (idx >> (2 - qj)) & 1 == 1)
                .map(|(_, a)| a.norm_sqr())
                .sum()
        };
        for qi in 0..3 {
            for qj in qi + 1..3 {
                let (_, pi) = sv.marginal_probability(qi).unwrap();
                let (_, pj) = sv.marginal_probability(qj).unwrap();
                assert!((joint(qi, qj) - pi * pj).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qubit_encode_rejects_out_of_range() {
        assert!(qubit_encode(&[-0.1]).is_err());
        assert!(qubit_encode(&[std::f64::consts::PI]).is_err());
    }

    #[test]
    fn prepare_pads_and_handles_degenerate() {
        let x = vec![1.0; 200];
        let out = prepare_features(&x).unwrap();
        assert_eq!(out.len(), 256);
        assert!(out[200..].iter().all(|&v| v == 0.0));

        let full = vec![2.0; 256];
        assert_eq!(prepare_features(&full).unwrap(), full);

        let zero = vec![0.0; 256];
        let out = prepare_features(&zero).unwrap();
        assert_eq!(out[0], 1.0);
        assert!(out[1..].iter().all(|&v| v == 0.0));
    }
}
