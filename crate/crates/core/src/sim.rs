//! Exact statevector simulation.
//!
//! Qubit ordering: qubit 0 is the most significant bit of the basis-state
//! index, so on 2 qubits the amplitude order is |00⟩, |01⟩, |10⟩, |11⟩
//! with qubit 0 the left bit. Encoders and the circuit layer share this
//! convention.

use crate::gates::{GateMatrix, C, ZERO};
use crate::{Error, Result};

pub const MAX_QUBITS: usize = 10;

/// Normalized state of an `num_qubits`-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C>,
}

impl StateVector {
    /// |0…0⟩ on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!(
                "num_qubits must be 1..={MAX_QUBITS}, got {num_qubits}"
            )));
        }
        let mut amps = vec![ZERO; 1 << num_qubits];
        amps[0] = C::new(1.0, 0.0);
        Ok(StateVector { num_qubits, amps })
    }

    /// Wrap raw amplitudes; they must already be normalized within 1e-6
    /// (they are then renormalized exactly).
    pub fn from_amplitudes(num_qubits: usize, amps: Vec<C>) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!(
                "num_qubits must be 1..={MAX_QUBITS}, got {num_qubits}"
            )));
        }
        if amps.len() != 1 << num_qubits {
            return Err(Error::Shape(format!(
                "expected {} amplitudes, got {}",
                1 << num_qubits,
                amps.len()
            )));
        }
        let mut sv = StateVector { num_qubits, amps };
        let norm = sv.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("amplitudes not normalized: norm {norm}")));
        }
        if (norm - 1.0).abs() > 1e-15 {
            for a in &mut sv.amps {
                *a /= norm;
            }
        }
        Ok(sv)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Apply a unitary to the listed qubits (identity elsewhere).
    /// Unitarity is checked in debug builds; the norm is renormalized only
    /// when accumulated drift exceeds 1e-12.
    pub fn apply_gate(&mut self, gate: &GateMatrix, qubits: &[usize]) -> Result<()> {
        self.check_qubits(gate, qubits)?;
        debug_assert!(
            gate.is_unitary(1e-10),
            "apply_gate requires a unitary matrix"
        );
        match gate {
            GateMatrix::One(m) => apply1(&mut self.amps, self.num_qubits, m, qubits[0]),
            GateMatrix::Two(m) => {
                apply2(&mut self.amps, self.num_qubits, m, qubits[0], qubits[1])
            }
        }
        let norm = self.norm();
        if (norm - 1.0).abs() > 1e-12 {
            for a in &mut self.amps {
                *a /= norm;
            }
        }
        Ok(())
    }

    fn check_qubits(&self, gate: &GateMatrix, qubits: &[usize]) -> Result<()> {
        if gate.arity() != qubits.len() {
            return Err(Error::Shape(format!(
                "gate arity {} vs {} qubit indices",
                gate.arity(),
                qubits.len()
            )));
        }
        for &q in qubits {
            if q >= self.num_qubits {
                return Err(Error::QubitOutOfRange {
                    index: q,
                    num_qubits: self.num_qubits,
                });
            }
        }
        if qubits.len() == 2 && qubits[0] == qubits[1] {
            return Err(Error::DuplicateQubits);
        }
        Ok(())
    }

    /// (p0, p1) for measuring the given qubit in the computational basis.
    pub fn marginal_probability(&self, qubit: usize) -> Result<(f64, f64)> {
        if qubit >= self.num_qubits {
            return Err(Error::QubitOutOfRange {
                index: qubit,
                num_qubits: self.num_qubits,
            });
        }
        let pos = self.num_qubits - 1 - qubit;
        let mask = 1usize << pos;
        let mut p0 = 0.0;
        let mut p1 = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            if i & mask == 0 {
                p0 += a.norm_sqr();
            } else {
                p1 += a.norm_sqr();
            }
        }
        Ok((p0, p1))
    }

    pub(crate) fn amps_mut(&mut self) -> &mut Vec<C> {
        &mut self.amps
    }
}

/// Raw 1-qubit gate application on an amplitude buffer; no unitarity or
/// norm handling (also used for non-unitary derivative matrices).
pub(crate) fn apply1(amps: &mut [C], num_qubits: usize, m: &[[C; 2]; 2], qubit: usize) {
    let pos = num_qubits - 1 - qubit;
    let stride = 1usize << pos;
    let len = amps.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            let a = amps[i];
            let b = amps[i + stride];
            amps[i] = m[0][0] * a + m[0][1] * b;
            amps[i + stride] = m[1][0] * a + m[1][1] * b;
        }
        base += 2 * stride;
    }
}

/// Raw 2-qubit gate application; the first qubit is the high bit of the
/// gate-local index.
pub(crate) fn apply2(amps: &mut [C], num_qubits: usize, m: &[[C; 4]; 4], qa: usize, qb: usize) {
    let pa = num_qubits - 1 - qa;
    let pb = num_qubits - 1 - qb;
    let sa = 1usize << pa;
    let sb = 1usize << pb;
    let (hi, lo) = if pa > pb { (pa, pb) } else { (pb, pa) };
    let quarter = amps.len() >> 2;
    let lo_mask = (1usize << lo) - 1;
    let hi_mask = (1usize << hi) - 1;
    for k in 0..quarter {
        // spread k over the index bits that are not pa or pb
        let t = ((k & !lo_mask) << 1) | (k & lo_mask);
        let i00 = ((t & !hi_mask) << 1) | (t & hi_mask);
        let i01 = i00 | sb;
        let i10 = i00 | sa;
        let i11 = i00 | sa | sb;
        let a0 = amps[i00];
        let a1 = amps[i01];
        let a2 = amps[i10];
        let a3 = amps[i11];
        amps[i00] = m[0][0] * a0 + m[0][1] * a1 + m[0][2] * a2 + m[0][3] * a3;
        amps[i01] = m[1][0] * a0 + m[1][1] * a1 + m[1][2] * a2 + m[1][3] * a3;
        amps[i10] = m[2][0] * a0 + m[2][1] * a1 + m[2][2] * a2 + m[2][3] * a3;
        amps[i11] = m[3][0] * a0 + m[3][1] * a1 + m[3][2] * a2 + m[3][3] * a3;
    }
}
