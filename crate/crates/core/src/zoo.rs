//! Ansatz catalog: the 11 two-qubit convolution blocks, the 3 pooling
//! kinds, and the QCNN builder wiring them into a closed-boundary
//! hierarchical circuit with per-layer parameter sharing.
//!
//! Catalog (see docs/ansatz-catalog.md for the full table):
//!   1  identity (no gates)                                    0 params
//!   2  Ry⊗Ry, CNOT                                            2
//!   3  Rx⊗Rx, CZ, Rx⊗Rx                                       4
//!   4  Ry⊗Ry, CZ, Ry⊗Ry, CZ, Ry⊗Ry                            6
//!   5  Rx⊗Rx, Rz⊗Rz, CRz(1→2), CRz(2→1)                       6
//!   6  Rx⊗Rx, Rz⊗Rz, CRx(1→2), CRx(2→1)                       6
//!   7  SO(4): M†(u3 ⊗ u3)M in the magic basis                 6
//!   8  Ry⊗Ry, CRz(1→2), Ry⊗Ry, CRz(2→1), Ry⊗Ry                8
//!   9  Rx⊗Rx, Rz⊗Rz, CRx(1→2), Rx⊗Rx, Rz⊗Rz, CRx(2→1)        10
//!  10  SU(4) KAK: (u3⊗u3)·N(a,b,c)·(u3⊗u3)                   15
//!  11  u3 on control, then |0⟩⟨0|⊗u3 + |1⟩⟨1|⊗u3               9

use crate::circuit::{CircuitProgram, GateKind, ParamGate};
use crate::gates::{self, cnot, cz, GateMatrix, Mat4, ZERO};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// General SU(2) gate used throughout the catalog (five-factor form).
pub fn u3(theta: f64, phi: f64, lambda: f64) -> GateMatrix {
    GateMatrix::One(gates::u3(theta, phi, lambda))
}

/// Convolution ansatz identifier, 1..=11.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConvAnsatzId(u8);

impl TryFrom<u8> for ConvAnsatzId {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        ConvAnsatzId::new(id)
    }
}

impl From<ConvAnsatzId> for u8 {
    fn from(id: ConvAnsatzId) -> u8 {
        id.0
    }
}

impl ConvAnsatzId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=11).contains(&id) {
            Ok(ConvAnsatzId(id))
        } else {
            Err(Error::Domain(format!("conv ansatz id must be 1..=11, got {id}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ConvAnsatzId> {
        (1..=11).map(ConvAnsatzId)
    }
}

impl std::fmt::Display for ConvAnsatzId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Zx,
    #[serde(rename = "gen")]
    Generalized,
    Trivial,
}

impl PoolingKind {
    pub fn all() -> [PoolingKind; 3] {
        [PoolingKind::Zx, PoolingKind::Generalized, PoolingKind::Trivial]
    }

    /// In benchmark mode trivial pooling is only paired with conv ids 10
    /// and 11; library callers may build any pairing.
    pub fn valid_benchmark_pairing(self, conv: ConvAnsatzId) -> bool {
        self != PoolingKind::Trivial || conv.get() == 10 || conv.get() == 11
    }
}

impl std::fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PoolingKind::Zx => "zx",
            PoolingKind::Generalized => "gen",
            PoolingKind::Trivial => "trivial",
        };
        write!(f, "{s}")
    }
}

pub fn conv_param_count(id: ConvAnsatzId) -> usize {
    [0, 2, 4, 6, 6, 6, 6, 8, 10, 15, 9][(id.get() - 1) as usize]
}

pub fn pool_param_count(kind: PoolingKind) -> usize {
    match kind {
        PoolingKind::Zx => 2,
        PoolingKind::Generalized => 6,
        PoolingKind::Trivial => 0,
    }
}

/// Template gate: kind, local qubit pattern (0 = first qubit of the
/// pair, 1 = second), and local parameter indices.
type TemplateGate = (GateKind, &'static [usize], &'static [usize]);

fn conv_template(id: ConvAnsatzId) -> Vec<TemplateGate> {
    use GateKind::*;
    match id.get() {
        1 => vec![],
        2 => vec![
            (Ry, &[0][..], &[0][..]),
            (Ry, &[1], &[1]),
            (Fixed(GateMatrix::Two(cnot())), &[0, 1], &[]),
        ],
        3 => vec![
            (Rx, &[0], &[0]),
            (Rx, &[1], &[1]),
            (Fixed(GateMatrix::Two(cz())), &[0, 1], &[]),
            (Rx, &[0], &[2]),
            (Rx, &[1], &[3]),
        ],
        4 => vec![
            (Ry, &[0], &[0]),
            (Ry, &[1], &[1]),
            (Fixed(GateMatrix::Two(cz())), &[0, 1], &[]),
            (Ry, &[0], &[2]),
            (Ry, &[1], &[3]),
            (Fixed(GateMatrix::Two(cz())), &[0, 1], &[]),
            (Ry, &[0], &[4]),
            (Ry, &[1], &[5]),
        ],
        5 => vec![
            (Rx, &[0], &[0]),
            (Rx, &[1], &[1]),
            (Rz, &[0], &[2]),
            (Rz, &[1], &[3]),
            (Crz, &[0, 1], &[4]),
            (Crz, &[1, 0], &[5]),
        ],
        6 => vec![
            (Rx, &[0], &[0]),
            (Rx, &[1], &[1]),
            (Rz, &[0], &[2]),
            (Rz, &[1], &[3]),
            (Crx, &[0, 1], &[4]),
            (Crx, &[1, 0], &[5]),
        ],
        7 => vec![(So4, &[0, 1], &[0, 1, 2, 3, 4, 5])],
        8 => vec![
            (Ry, &[0], &[0]),
            (Ry, &[1], &[1]),
            (Crz, &[0, 1], &[2]),
            (Ry, &[0], &[3]),
            (Ry, &[1], &[4]),
            (Crz, &[1, 0], &[5]),
            (Ry, &[0], &[6]),
            (Ry, &[1], &[7]),
        ],
        9 => vec![
            (Rx, &[0], &[0]),
            (Rx, &[1], &[1]),
            (Rz, &[0], &[2]),
            (Rz, &[1], &[3]),
            (Crx, &[0, 1], &[4]),
            (Rx, &[0], &[5]),
            (Rx, &[1], &[6]),
            (Rz, &[0], &[7]),
            (Rz, &[1], &[8]),
            (Crx, &[1, 0], &[9]),
        ],
        10 => vec![
            (U3, &[0], &[0, 1, 2]),
            (U3, &[1], &[3, 4, 5]),
            (CanonicalN, &[0, 1], &[6, 7, 8]),
            (U3, &[0], &[9, 10, 11]),
            (U3, &[1], &[12, 13, 14]),
        ],
        // u3 on the control, then the two-subspace gate whose |0⟩ block
        // takes local params 3..6 and |1⟩ block takes 6..9.
        11 => vec![
            (U3, &[0], &[0, 1, 2]),
            (TwoSubspaceU3, &[0, 1], &[6, 7, 8, 3, 4, 5]),
        ],
        _ => unreachable!(),
    }
}

fn pool_template(kind: PoolingKind) -> Vec<TemplateGate> {
    use GateKind::*;
    match kind {
        PoolingKind::Zx => vec![(ZxPool, &[0, 1][..], &[0, 1][..])],
        PoolingKind::Generalized => vec![(TwoSubspaceU3, &[0, 1], &[0, 1, 2, 3, 4, 5])],
        PoolingKind::Trivial => vec![],
    }
}

fn instantiate(
    template: &[TemplateGate],
    pair: (usize, usize),
    slot_base: usize,
) -> Vec<ParamGate> {
    let map_q = |local: usize| if local == 0 { pair.0 } else { pair.1 };
    template
        .iter()
        .map(|(kind, qubits, slots)| ParamGate {
            kind: kind.clone(),
            qubits: qubits.iter().map(|&q| map_q(q)).collect(),
            slots: slots.iter().map(|&s| slot_base + s).collect(),
        })
        .collect()
}

/// Gate sequence of one convolution block on the qubit pair (0, 1), with
/// local slot indices 0..conv_param_count(id). `params` is validated for
/// length only (the sequence stays parameterized).
pub fn conv_block(id: ConvAnsatzId, params: &[f64]) -> Result<Vec<ParamGate>> {
    let want = conv_param_count(id);
    if params.len() != want {
        return Err(Error::ParamCount {
            expected: want,
            got: params.len(),
        });
    }
    Ok(instantiate(&conv_template(id), (0, 1), 0))
}

/// Gate sequence of one pooling block on (control = 0, target = 1); the
/// control is discarded by the caller afterwards.
pub fn pool_block(kind: PoolingKind, params: &[f64]) -> Result<Vec<ParamGate>> {
    let want = pool_param_count(kind);
    if params.len() != want {
        return Err(Error::ParamCount {
            expected: want,
            got: params.len(),
        });
    }
    Ok(instantiate(&pool_template(kind), (0, 1), 0))
}

/// 4×4 matrix of a two-qubit gate sequence on the pair (0, 1), bound at
/// `params` (indexed by the gates' slot values).
pub fn block_matrix(gates_seq: &[ParamGate], params: &[f64]) -> Mat4 {
    let mut total = gates::eye4();
    for g in gates_seq {
        let local: Vec<f64> = g.slots.iter().map(|&s| params[s]).collect();
        let built = g.kind.build(&local);
        let embedded: Mat4 = match (&built, g.qubits.as_slice()) {
            (GateMatrix::One(m), [0]) => gates::kron(m, &gates::eye2()),
            (GateMatrix::One(m), [1]) => gates::kron(&gates::eye2(), m),
            (GateMatrix::Two(m), [0, 1]) => *m,
            (GateMatrix::Two(m), [1, 0]) => permute_swap(m),
            _ => panic!("block gates must act on qubits 0/1"),
        };
        total = gates::mul4(&embedded, &total);
    }
    total
}

/// Conjugate a 4×4 matrix by SWAP (relabels which qubit is the high bit).
fn permute_swap(m: &Mat4) -> Mat4 {
    let perm = [0usize, 2, 1, 3];
    let mut out = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[perm[r]][perm[c]] = m[r][c];
        }
    }
    out
}

pub fn conv_block_matrix(id: ConvAnsatzId, params: &[f64]) -> Result<Mat4> {
    Ok(block_matrix(&conv_block(id, params)?, params))
}

pub fn pool_block_matrix(kind: PoolingKind, params: &[f64]) -> Result<Mat4> {
    Ok(block_matrix(&pool_block(kind, params)?, params))
}

/// Slot ranges owned by one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub conv: std::ops::Range<usize>,
    pub pool: std::ops::Range<usize>,
}

/// A QCNN head: hierarchical circuit plus its flat parameter vector.
#[derive(Clone, Debug)]
pub struct QcnnModel {
    pub conv_id: ConvAnsatzId,
    pub pooling: PoolingKind,
    pub num_input_qubits: usize,
    pub params: Vec<f64>,
    pub layer_slots: Vec<LayerSlots>,
    program: CircuitProgram,
}

impl QcnnModel {
    /// Standard 8-qubit, 3-layer architecture.
    pub fn new(conv_id: ConvAnsatzId, pooling: PoolingKind) -> Self {
        Self::new_sized(conv_id, pooling, 8).expect("8 qubits is always valid")
    }

    /// Power-of-two register sizes from 2 to 8 qubits (4 is used by the
    /// density-oracle validation).
    pub fn new_sized(conv_id: ConvAnsatzId, pooling: PoolingKind, num_qubits: usize) -> Result<Self> {
        if !matches!(num_qubits, 2 | 4 | 8) {
            return Err(Error::Domain(format!(
                "QCNN register must be 2, 4, or 8 qubits, got {num_qubits}"
            )));
        }
        let c = conv_param_count(conv_id);
        let p = pool_param_count(pooling);
        let conv_t = conv_template(conv_id);
        let pool_t = pool_template(pooling);

        let mut gates_out = Vec::new();
        let mut layer_slots = Vec::new();
        let mut survivors: Vec<usize> = (0..num_qubits).collect();
        let mut base = 0;
        while survivors.len() > 1 {
            let conv_range = base..base + c;
            let pool_range = base + c..base + c + p;
            let m = survivors.len();
            if m == 2 {
                gates_out.extend(instantiate(&conv_t, (survivors[0], survivors[1]), base));
            } else {
                for i in (0..m).step_by(2) {
                    gates_out.extend(instantiate(&conv_t, (survivors[i], survivors[i + 1]), base));
                }
                for i in (1..m).step_by(2) {
                    let next = survivors[(i + 1) % m];
                    gates_out.extend(instantiate(&conv_t, (survivors[i], next), base));
                }
            }
            for i in (0..m).step_by(2) {
                gates_out.extend(instantiate(
                    &pool_t,
                    (survivors[i], survivors[i + 1]),
                    base + c,
                ));
            }
            layer_slots.push(LayerSlots {
                conv: conv_range,
                pool: pool_range,
            });
            survivors = survivors
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 == 1)
                .map(|(_, &q)| q)
                .collect();
            base += c + p;
        }

        let program = CircuitProgram {
            num_qubits,
            gates: gates_out,
            num_params: base,
            output_qubit: survivors[0],
        };
        program.validate()?;
        let params = vec![0.0; base];
        Ok(QcnnModel {
            conv_id,
            pooling,
            num_input_qubits: num_qubits,
            params,
            layer_slots,
            program,
        })
    }

    pub fn program(&self) -> &CircuitProgram {
        &self.program
    }

    pub fn num_params(&self) -> usize {
        self.program.num_params
    }

    /// Original ids of the qubits discarded by pooling (everything except
    /// the output qubit).
    pub fn traced_qubits(&self) -> Vec<usize> {
        (0..self.num_input_qubits)
            .filter(|&q| q != self.program.output_qubit)
            .collect()
    }
}

/// The assembled 8-qubit circuit for a (convolution, pooling) choice.
pub fn build_qcnn(conv_id: ConvAnsatzId, pooling: PoolingKind) -> CircuitProgram {
    QcnnModel::new(conv_id, pooling).program.clone()
}

/// Parameter assignment under which generalized pooling reproduces ZX
/// pooling exactly: u3(0, θ, 0) = Rz(θ) and u3(θ, −π/2, π/2) = Rx(θ).
pub fn zx_as_generalized(theta1: f64, theta2: f64) -> [f64; 6] {
    use std::f64::consts::FRAC_PI_2;
    [0.0, theta1, 0.0, theta2, -FRAC_PI_2, FRAC_PI_2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{output_distribution, run_circuit};
    use crate::gates::eye4;
    use crate::sim::StateVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_params(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n)
            .map(|_| rng.random_range(0.0..2.0 * std::f64::consts::PI))
            .collect()
    }

    #[test]
    fn param_count_table() {
        let counts: Vec<usize> = ConvAnsatzId::all().map(conv_param_count).collect();
        assert_eq!(counts, vec![0, 2, 4, 6, 6, 6, 6, 8, 10, 15, 9]);
        assert_eq!(pool_param_count(PoolingKind::Zx), 2);
        assert_eq!(pool_param_count(PoolingKind::Generalized), 6);
        assert_eq!(pool_param_count(PoolingKind::Trivial), 0);
    }

    #[test]
    fn qcnn_param_totals() {
        assert_eq!(
            build_qcnn(ConvAnsatzId::new(10).unwrap(), PoolingKind::Zx).num_params,
            51
        );
        assert_eq!(
            build_qcnn(ConvAnsatzId::new(1).unwrap(), PoolingKind::Trivial).num_params,
            0
        );
        assert_eq!(
            build_qcnn(ConvAnsatzId::new(10).unwrap(), PoolingKind::Generalized).num_params,
            63
        );
    }

    #[test]
    fn conv_one_is_empty_and_trivial_pool_is_empty() {
        assert!(conv_block(ConvAnsatzId::new(1).unwrap(), &[]).unwrap().is_empty());
        assert!(pool_block(PoolingKind::Trivial, &[]).unwrap().is_empty());
        assert!(conv_block(ConvAnsatzId::new(2).unwrap(), &[0.0]).is_err());
    }

    #[test]
    fn all_blocks_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for id in ConvAnsatzId::all() {
            let p = rand_params(conv_param_count(id), &mut rng);
            let m = conv_block_matrix(id, &p).unwrap();
            assert!(
                GateMatrix::Two(m).is_unitary(1e-10),
                "conv {id} not unitary"
            );
        }
        for kind in PoolingKind::all() {
            let p = rand_params(pool_param_count(kind), &mut rng);
            let m = pool_block_matrix(kind, &p).unwrap();
            assert!(GateMatrix::Two(m).is_unitary(1e-10));
        }
    }

    #[test]
    fn conv_ten_at_zero_is_identity() {
        let m = conv_block_matrix(ConvAnsatzId::new(10).unwrap(), &[0.0; 15]).unwrap();
        let id = eye4();
        for r in 0..4 {
            for c in 0..4 {
                assert!((m[r][c] - id[r][c]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_ten_zero_point_leaves_qcnn_state_unchanged() {
        let prog = build_qcnn(ConvAnsatzId::new(10).unwrap(), PoolingKind::Trivial);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let amps: Vec<crate::gates::C> = {
            let raw: Vec<crate::gates::C> = (0..256)
                .map(|_| {
                    crate::gates::C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .collect();
            let norm: f64 = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            raw.into_iter().map(|a| a / norm).collect()
        };
        let input = StateVector::from_amplitudes(8, amps).unwrap();
        let out = run_circuit(&prog, &vec![0.0; prog.num_params], &input).unwrap();
        for (a, b) in input.amplitudes().iter().zip(out.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn so4_block_is_real_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let p = rand_params(6, &mut rng);
            let m = conv_block_matrix(ConvAnsatzId::new(7).unwrap(), &p).unwrap();
            for row in &m {
                for e in row {
                    assert!(e.im.abs() < 1e-9, "SO(4) block has imaginary part {}", e.im);
                }
            }
            // orthogonality: M·Mᵀ = I over the real parts
            for r in 0..4 {
                for c in 0..4 {
                    let dot: f64 = (0..4).map(|k| m[r][k].re * m[c][k].re).sum();
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn generalized_pool_reproduces_zx_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t1 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let t2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let zx = pool_block_matrix(PoolingKind::Zx, &[t1, t2]).unwrap();
            let gen =
                pool_block_matrix(PoolingKind::Generalized, &zx_as_generalized(t1, t2)).unwrap();
            for r in 0..4 {
                for c in 0..4 {
                    assert!((zx[r][c] - gen[r][c]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zx_pool_at_zero_is_identity() {
        let m = pool_block_matrix(PoolingKind::Zx, &[0.0, 0.0]).unwrap();
        let id = eye4();
        for r in 0..4 {
            for c in 0..4 {
                assert!((m[r][c] - id[r][c]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn qcnn_wiring_halves_survivors_and_ends_on_last_qubit() {
        let model = QcnnModel::new(ConvAnsatzId::new(2).unwrap(), PoolingKind::Zx);
        assert_eq!(model.program().output_qubit, 7);
        assert_eq!(model.layer_slots.len(), 3);
        let pool_gates = model
            .program()
            .gates
            .iter()
            .filter(|g| g.kind == GateKind::ZxPool)
            .count();
        assert_eq!(pool_gates, 4 + 2 + 1);
        // conv blocks: 8 in layer 1 (two staggered rows of 4), 4 in layer
        // 2, 1 in layer 3; each id-2 block contributes one CNOT.
        let cnots = model
            .program()
            .gates
            .iter()
            .filter(|g| matches!(g.kind, GateKind::Fixed(_)))
            .count();
        assert_eq!(cnots, 8 + 4 + 1);
        assert_eq!(model.traced_qubits(), vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn layer_parameter_sharing_matches_unrolled_circuit() {
        let model = QcnnModel::new(ConvAnsatzId::new(4).unwrap(), PoolingKind::Generalized);
        let prog = model.program();
        // unroll: give every gate occurrence its own fresh slots
        let mut unrolled = prog.clone();
        let mut next = 0;
        let mut expand: Vec<usize> = Vec::new();
        for g in &mut unrolled.gates {
            for s in &mut g.slots {
                expand.push(*s);
                *s = next;
                next += 1;
            }
        }
        unrolled.num_params = next;

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let shared: Vec<f64> = rand_params(prog.num_params, &mut rng);
        let dup: Vec<f64> = expand.iter().map(|&s| shared[s]).collect();
        let input = StateVector::zero_state(8).unwrap();
        let a = output_distribution(prog, &shared, &input).unwrap();
        let b = output_distribution(&unrolled, &dup, &input).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12);
    }

    #[test]
    fn sized_builder_accepts_4_rejects_odd() {
        let m = QcnnModel::new_sized(ConvAnsatzId::new(2).unwrap(), PoolingKind::Zx, 4).unwrap();
        assert_eq!(m.program().output_qubit, 3);
        assert_eq!(m.num_params(), 2 * (2 + 2));
        assert!(QcnnModel::new_sized(ConvAnsatzId::new(2).unwrap(), PoolingKind::Zx, 6).is_err());
    }

    #[test]
    fn benchmark_pairing_rule() {
        let c1 = ConvAnsatzId::new(1).unwrap();
        let c10 = ConvAnsatzId::new(10).unwrap();
        let c11 = ConvAnsatzId::new(11).unwrap();
        assert!(!PoolingKind::Trivial.valid_benchmark_pairing(c1));
        assert!(PoolingKind::Trivial.valid_benchmark_pairing(c10));
        assert!(PoolingKind::Trivial.valid_benchmark_pairing(c11));
        assert!(PoolingKind::Zx.valid_benchmark_pairing(c1));
    }
}
