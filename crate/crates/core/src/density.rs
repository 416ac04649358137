//! Density-matrix evolution with explicit partial traces.
//!
//! Validation oracle for the deferred-trace pooling scheme; capped at
//! 4 qubits and kept out of the training hot path.

use crate::gates::{GateMatrix, C, ZERO};
use crate::sim::{apply1, apply2, StateVector};
use crate::{Error, Result};

pub const MAX_ORACLE_QUBITS: usize = 4;

/// Mixed state over a shrinking set of original qubit ids. Rows/columns
/// are indexed with the same MSB-first ordering as [`StateVector`],
/// restricted to the qubits still alive.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    qubits: Vec<usize>,
    mat: Vec<C>, // dim × dim row-major, dim = 2^qubits.len()
}

impl DensityMatrix {
    pub fn from_state(state: &StateVector) -> Result<Self> {
        let n = state.num_qubits();
        if n > MAX_ORACLE_QUBITS {
            return Err(Error::Domain(format!(
                "density oracle capped at {MAX_ORACLE_QUBITS} qubits, got {n}"
            )));
        }
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut mat = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                mat[r * dim + c] = amps[r] * amps[c].conj();
            }
        }
        Ok(DensityMatrix {
            qubits: (0..n).collect(),
            mat,
        })
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits.len()
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn entry(&self, r: usize, c: usize) -> C {
        self.mat[r * self.dim() + c]
    }

    fn position_of(&self, original: usize) -> Result<usize> {
        self.qubits
            .iter()
            .position(|&q| q == original)
            .ok_or(Error::QubitOutOfRange {
                index: original,
                num_qubits: self.qubits.len(),
            })
    }

    /// ρ → U ρ U† with U embedded at the given original qubit ids.
    pub fn apply_gate(&mut self, gate: &GateMatrix, original_qubits: &[usize]) -> Result<()> {
        if gate.arity() != original_qubits.len() {
            return Err(Error::Shape(format!(
                "gate arity {} vs {} qubit indices",
                gate.arity(),
                original_qubits.len()
            )));
        }
        let positions: Vec<usize> = original_qubits
            .iter()
            .map(|&q| self.position_of(q))
            .collect::<Result<_>>()?;
        if positions.len() == 2 && positions[0] == positions[1] {
            return Err(Error::DuplicateQubits);
        }
        let n = self.qubits.len();
        let dim = self.dim();
        // U ρ: apply U to each column; then (Uρ) U† = (U (Uρ)†)† via the
        // same column transform on the conjugate transpose.
        for _ in 0..2 {
            let mut col = vec![ZERO; dim];
            for c in 0..dim {
                for r in 0..dim {
                    col[r] = self.mat[r * dim + c];
                }
                match gate {
                    GateMatrix::One(m) => apply1(&mut col, n, m, positions[0]),
                    GateMatrix::Two(m) => apply2(&mut col, n, m, positions[0], positions[1]),
                }
                for r in 0..dim {
                    self.mat[r * dim + c] = col[r];
                }
            }
            self.adjoint_in_place();
        }
        Ok(())
    }

    fn adjoint_in_place(&mut self) {
        let dim = self.dim();
        for r in 0..dim {
            for c in 0..r {
                let a = self.mat[r * dim + c];
                self.mat[r * dim + c] = self.mat[c * dim + r].conj();
                self.mat[c * dim + r] = a.conj();
            }
            self.mat[r * dim + r] = self.mat[r * dim + r].conj();
        }
    }

    /// Trace out one qubit, shrinking the matrix by half in each
    /// dimension. The qubit is identified by its original id.
    pub fn partial_trace(&mut self, original_qubit: usize) -> Result<()> {
        let pos = self.position_of(original_qubit)?;
        let n = self.qubits.len();
        if n == 1 {
            return Err(Error::Domain("cannot trace out the last qubit".into()));
        }
        let dim = self.dim();
        let bit = n - 1 - pos;
        let keep_dim = dim >> 1;
        let expand = |k: usize| -> usize {
            let mask = (1usize << bit) - 1;
            ((k & !mask) << 1) | (k & mask)
        };
        let mut out = vec![ZERO; keep_dim * keep_dim];
        for r in 0..keep_dim {
            let r0 = expand(r);
            for c in 0..keep_dim {
                let c0 = expand(c);
                let b = 1usize << bit;
                out[r * keep_dim + c] =
                    self.mat[r0 * dim + c0] + self.mat[(r0 | b) * dim + (c0 | b)];
            }
        }
        self.mat = out;
        self.qubits.remove(pos);
        Ok(())
    }

    pub fn trace(&self) -> C {
        let dim = self.dim();
        (0..dim).map(|i| self.mat[i * dim + i]).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut dev: f64 = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                dev = dev.max((self.mat[r * dim + c] - self.mat[c * dim + r].conj()).norm());
            }
        }
        dev
    }

    /// Probabilistic positive-semidefiniteness probe: min of ⟨v|ρ|v⟩ over
    /// the given random unit vectors (exact eigensolver intentionally
    /// avoided at this scale).
    pub fn psd_probe(&self, probes: &[Vec<C>]) -> f64 {
        let dim = self.dim();
        let mut min = f64::INFINITY;
        for v in probes {
            assert_eq!(v.len(), dim);
            let mut quad = C::new(0.0, 0.0);
            for r in 0..dim {
                for c in 0..dim {
                    quad += v[r].conj() * self.mat[r * dim + c] * v[c];
                }
            }
            let nrm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            min = min.min(quad.re / nrm);
        }
        min
    }

    /// (p0, p1) of an alive qubit from the diagonal.
    pub fn diagonal_marginal(&self, original_qubit: usize) -> Result<(f64, f64)> {
        let pos = self.position_of(original_qubit)?;
        let n = self.qubits.len();
        let bit = n - 1 - pos;
        let dim = self.dim();
        let mut p0 = 0.0;
        let mut p1 = 0.0;
        for i in 0..dim {
            let d = self.mat[i * dim + i].re;
            if i & (1 << bit) == 0 {
                p0 += d;
            } else {
                p1 += d;
            }
        }
        Ok((p0, p1))
    }
}
