//! Parameterized circuits: gate kinds with analytic derivative matrices,
//! circuit programs with parameter sharing, execution, and analytic
//! gradients of the output-qubit probability.

use crate::density::DensityMatrix;
use crate::gates::{
    canonical_n, canonical_n_derivs, controlled_pair, d_rx, d_ry, d_rz, dag4, eye2, kron,
    magic_basis, mul4, rx, ry, rz, u3, u3_derivs, GateMatrix, Mat2, Mat4, C, ZERO,
};
use crate::sim::{apply1, apply2, StateVector};
use crate::{Error, Result};

/// Parameterized gate families. Two-qubit kinds treat the first listed
/// qubit as the high bit (and the control where applicable).
#[derive(Clone, Debug, PartialEq)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    /// General SU(2): u3(θ, φ, λ).
    U3,
    /// Controlled Rz, control = first qubit.
    Crz,
    /// Controlled Rx, control = first qubit.
    Crx,
    /// exp(i(a·XX + b·YY + c·ZZ)), 3 params.
    CanonicalN,
    /// SO(4) element M†(u3(p0..3) ⊗ u3(p3..6))M, 6 params.
    So4,
    /// |1⟩⟨1|⊗u3(p0,p1,p2) + |0⟩⟨0|⊗u3(p3,p4,p5), control = first qubit.
    TwoSubspaceU3,
    /// |1⟩⟨1|⊗Rz(p0) + |0⟩⟨0|⊗Rx(p1).
    ZxPool,
    /// Constant gate, no parameters.
    Fixed(GateMatrix),
}

const ZERO2: Mat2 = [[ZERO; 2]; 2];

impl GateKind {
    pub fn param_count(&self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::Crz | GateKind::Crx => 1,
            GateKind::U3 | GateKind::CanonicalN => 3,
            GateKind::So4 | GateKind::TwoSubspaceU3 => 6,
            GateKind::ZxPool => 2,
            GateKind::Fixed(_) => 0,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::U3 => 1,
            GateKind::Fixed(m) => m.arity(),
            _ => 2,
        }
    }

    pub fn build(&self, p: &[f64]) -> GateMatrix {
        assert_eq!(p.len(), self.param_count());
        match self {
            GateKind::Rx => GateMatrix::One(rx(p[0])),
            GateKind::Ry => GateMatrix::One(ry(p[0])),
            GateKind::Rz => GateMatrix::One(rz(p[0])),
            GateKind::U3 => GateMatrix::One(u3(p[0], p[1], p[2])),
            GateKind::Crz => GateMatrix::Two(controlled_pair(&eye2(), &rz(p[0]))),
            GateKind::Crx => GateMatrix::Two(controlled_pair(&eye2(), &rx(p[0]))),
            GateKind::CanonicalN => GateMatrix::Two(canonical_n(p[0], p[1], p[2])),
            GateKind::So4 => GateMatrix::Two(so4(p)),
            GateKind::TwoSubspaceU3 => GateMatrix::Two(controlled_pair(
                &u3(p[3], p[4], p[5]),
                &u3(p[0], p[1], p[2]),
            )),
            GateKind::ZxPool => GateMatrix::Two(controlled_pair(&rx(p[1]), &rz(p[0]))),
            GateKind::Fixed(m) => m.clone(),
        }
    }

    /// Entrywise analytic derivative matrix per parameter, same order as
    /// the parameter slice.
    pub fn derivs(&self, p: &[f64]) -> Vec<GateMatrix> {
        assert_eq!(p.len(), self.param_count());
        match self {
            GateKind::Rx => vec![GateMatrix::One(d_rx(p[0]))],
            GateKind::Ry => vec![GateMatrix::One(d_ry(p[0]))],
            GateKind::Rz => vec![GateMatrix::One(d_rz(p[0]))],
            GateKind::U3 => u3_derivs(p[0], p[1], p[2])
                .into_iter()
                .map(GateMatrix::One)
                .collect(),
            GateKind::Crz => vec![GateMatrix::Two(controlled_pair(&ZERO2, &d_rz(p[0])))],
            GateKind::Crx => vec![GateMatrix::Two(controlled_pair(&ZERO2, &d_rx(p[0])))],
            GateKind::CanonicalN => canonical_n_derivs(p[0], p[1], p[2])
                .into_iter()
                .map(GateMatrix::Two)
                .collect(),
            GateKind::So4 => so4_derivs(p).into_iter().map(GateMatrix::Two).collect(),
            GateKind::TwoSubspaceU3 => {
                let d_hi = u3_derivs(p[0], p[1], p[2]);
                let d_lo = u3_derivs(p[3], p[4], p[5]);
                let mut out = Vec::with_capacity(6);
                for d in d_hi {
                    out.push(GateMatrix::Two(controlled_pair(&ZERO2, &d)));
                }
                for d in d_lo {
                    out.push(GateMatrix::Two(controlled_pair(&d, &ZERO2)));
                }
                out
            }
            GateKind::ZxPool => vec![
                GateMatrix::Two(controlled_pair(&ZERO2, &d_rz(p[0]))),
                GateMatrix::Two(controlled_pair(&d_rx(p[1]), &ZERO2)),
            ],
            GateKind::Fixed(_) => Vec::new(),
        }
    }
}

fn so4(p: &[f64]) -> Mat4 {
    let m = magic_basis();
    let local = kron(&u3(p[0], p[1], p[2]), &u3(p[3], p[4], p[5]));
    mul4(&mul4(&dag4(&m), &local), &m)
}

fn so4_derivs(p: &[f64]) -> Vec<Mat4> {
    let m = magic_basis();
    let md = dag4(&m);
    let a = u3(p[0], p[1], p[2]);
    let b = u3(p[3], p[4], p[5]);
    let da = u3_derivs(p[0], p[1], p[2]);
    let db = u3_derivs(p[3], p[4], p[5]);
    let mut out = Vec::with_capacity(6);
    for d in da {
        out.push(mul4(&mul4(&md, &kron(&d, &b)), &m));
    }
    for d in db {
        out.push(mul4(&mul4(&md, &kron(&a, &d)), &m));
    }
    out
}

/// One gate instance: a kind, target qubits, and indices into the shared
/// parameter vector (slots may repeat across gates for weight sharing).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub slots: Vec<usize>,
}

/// Ordered gate list over a fixed register, measuring one output qubit.
#[derive(Clone, Debug)]
pub struct CircuitProgram {
    pub num_qubits: usize,
    pub gates: Vec<ParamGate>,
    pub num_params: usize,
    pub output_qubit: usize,
}

impl CircuitProgram {
    pub fn validate(&self) -> Result<()> {
        if self.output_qubit >= self.num_qubits {
            return Err(Error::QubitOutOfRange {
                index: self.output_qubit,
                num_qubits: self.num_qubits,
            });
        }
        for g in &self.gates {
            if g.qubits.len() != g.kind.arity() {
                return Err(Error::Shape(format!(
                    "gate arity {} vs {} qubits",
                    g.kind.arity(),
                    g.qubits.len()
                )));
            }
            if g.slots.len() != g.kind.param_count() {
                return Err(Error::ParamCount {
                    expected: g.kind.param_count(),
                    got: g.slots.len(),
                });
            }
            for &q in &g.qubits {
                if q >= self.num_qubits {
                    return Err(Error::QubitOutOfRange {
                        index: q,
                        num_qubits: self.num_qubits,
                    });
                }
            }
            if g.qubits.len() == 2 && g.qubits[0] == g.qubits[1] {
                return Err(Error::DuplicateQubits);
            }
            for &s in &g.slots {
                if s >= self.num_params {
                    return Err(Error::Domain(format!(
                        "slot {s} out of range for {} params",
                        self.num_params
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A program with its gate matrices resolved at a parameter point.
pub struct BoundCircuit<'p> {
    program: &'p CircuitProgram,
    mats: Vec<GateMatrix>,
    derivs: Vec<Vec<GateMatrix>>,
}

/// Resolve gate matrices (and derivative matrices) at `params`.
pub fn bind<'p>(program: &'p CircuitProgram, params: &[f64]) -> Result<BoundCircuit<'p>> {
    if params.len() != program.num_params {
        return Err(Error::ParamCount {
            expected: program.num_params,
            got: params.len(),
        });
    }
    program.validate()?;
    let mut mats = Vec::with_capacity(program.gates.len());
    let mut derivs = Vec::with_capacity(program.gates.len());
    let mut local = Vec::new();
    for g in &program.gates {
        local.clear();
        local.extend(g.slots.iter().map(|&s| params[s]));
        let m = g.kind.build(&local);
        debug_assert!(m.is_unitary(1e-10), "bound gate must be unitary");
        derivs.push(g.kind.derivs(&local));
        mats.push(m);
    }
    Ok(BoundCircuit {
        program,
        mats,
        derivs,
    })
}

impl BoundCircuit<'_> {
    fn apply_all(&self, amps: &mut [C]) {
        let n = self.program.num_qubits;
        for (g, m) in self.program.gates.iter().zip(&self.mats) {
            apply_raw(amps, n, m, &g.qubits);
        }
    }

    /// Run on a copy of `input` and return the final state.
    pub fn run(&self, input: &StateVector) -> Result<StateVector> {
        if input.num_qubits() != self.program.num_qubits {
            return Err(Error::Shape(format!(
                "input has {} qubits, program {}",
                input.num_qubits(),
                self.program.num_qubits
            )));
        }
        let mut out = input.clone();
        self.apply_all(out.amps_mut());
        let norm = out.norm();
        if (norm - 1.0).abs() > 1e-12 {
            for a in out.amps_mut() {
                *a /= norm;
            }
        }
        Ok(out)
    }

    /// (p0, p1) on the program's output qubit.
    pub fn output_distribution(&self, input: &StateVector) -> Result<(f64, f64)> {
        let state = self.run(input)?;
        state.marginal_probability(self.program.output_qubit)
    }

    /// p0 plus its gradient with respect to every parameter slot, via one
    /// reverse sweep. Parameter sharing sums contributions across all
    /// gate occurrences bound to a slot: with λ the output projector
    /// back-propagated through U†, each occurrence adds
    /// 2·Re⟨λ_j, D_{j,k}·ψ_{j−1}⟩ to its slot.
    pub fn gradient(&self, input: &StateVector) -> Result<(f64, Vec<f64>)> {
        if input.num_qubits() != self.program.num_qubits {
            return Err(Error::Shape(format!(
                "input has {} qubits, program {}",
                input.num_qubits(),
                self.program.num_qubits
            )));
        }
        let n = self.program.num_qubits;
        let mut psi: Vec<C> = input.amplitudes().to_vec();
        self.apply_all(&mut psi);

        let pos = n - 1 - self.program.output_qubit;
        let mask = 1usize << pos;
        let mut p0 = 0.0;
        let mut lambda: Vec<C> = psi
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if i & mask == 0 {
                    p0 += a.norm_sqr();
                    *a
                } else {
                    ZERO
                }
            })
            .collect();

        let mut grad = vec![0.0; self.program.num_params];
        for (j, g) in self.program.gates.iter().enumerate().rev() {
            let u_dag = self.mats[j].dagger();
            apply_raw(&mut psi, n, &u_dag, &g.qubits);
            for (k, &slot) in g.slots.iter().enumerate() {
                let inner = inner_with_gate(&lambda, &psi, &self.derivs[j][k], &g.qubits, n);
                grad[slot] += 2.0 * inner.re;
            }
            apply_raw(&mut lambda, n, &u_dag, &g.qubits);
        }
        Ok((p0, grad))
    }
}

fn apply_raw(amps: &mut [C], n: usize, m: &GateMatrix, qubits: &[usize]) {
    match m {
        GateMatrix::One(m) => apply1(amps, n, m, qubits[0]),
        GateMatrix::Two(m) => apply2(amps, n, m, qubits[0], qubits[1]),
    }
}

/// ⟨λ| (D embedded at `qubits`) |ψ⟩ without materializing D|ψ⟩.
fn inner_with_gate(lambda: &[C], psi: &[C], d: &GateMatrix, qubits: &[usize], n: usize) -> C {
    let mut acc = ZERO;
    match d {
        GateMatrix::One(m) => {
            let pos = n - 1 - qubits[0];
            let stride = 1usize << pos;
            let mut base = 0;
            while base < psi.len() {
                for i in base..base + stride {
                    let j = i + stride;
                    acc += lambda[i].conj() * (m[0][0] * psi[i] + m[0][1] * psi[j]);
                    acc += lambda[j].conj() * (m[1][0] * psi[i] + m[1][1] * psi[j]);
                }
                base += 2 * stride;
            }
        }
        GateMatrix::Two(m) => {
            let pa = n - 1 - qubits[0];
            let pb = n - 1 - qubits[1];
            let sa = 1usize << pa;
            let sb = 1usize << pb;
            let (hi, lo) = if pa > pb { (pa, pb) } else { (pb, pa) };
            let lo_mask = (1usize << lo) - 1;
            let hi_mask = (1usize << hi) - 1;
            for k in 0..psi.len() >> 2 {
                let t = ((k & !lo_mask) << 1) | (k & lo_mask);
                let i00 = ((t & !hi_mask) << 1) | (t & hi_mask);
                let idx = [i00, i00 | sb, i00 | sa, i00 | sa | sb];
                for (r, &ir) in idx.iter().enumerate() {
                    let mut row = ZERO;
                    for (c, &ic) in idx.iter().enumerate() {
                        row += m[r][c] * psi[ic];
                    }
                    acc += lambda[ir].conj() * row;
                }
            }
        }
    }
    acc
}

/// Apply the program's gates in order with parameters resolved through
/// the slot map.
pub fn run_circuit(
    program: &CircuitProgram,
    params: &[f64],
    input: &StateVector,
) -> Result<StateVector> {
    bind(program, params)?.run(input)
}

/// (p0, p1) on the output qubit after running the circuit.
pub fn output_distribution(
    program: &CircuitProgram,
    params: &[f64],
    input: &StateVector,
) -> Result<(f64, f64)> {
    bind(program, params)?.output_distribution(input)
}

/// Analytic ∂p0/∂θ_k for all slots.
pub fn probability_gradient(
    program: &CircuitProgram,
    params: &[f64],
    input: &StateVector,
) -> Result<Vec<f64>> {
    Ok(bind(program, params)?.gradient(input)?.1)
}

/// Central finite differences of p0; validation oracle for
/// [`probability_gradient`].
pub fn finite_difference_gradient(
    program: &CircuitProgram,
    params: &[f64],
    input: &StateVector,
    step: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for k in 0..params.len() {
        work[k] = params[k] + step;
        let (hi, _) = output_distribution(program, &work, input)?;
        work[k] = params[k] - step;
        let (lo, _) = output_distribution(program, &work, input)?;
        work[k] = params[k];
        grad[k] = (hi - lo) / (2.0 * step);
    }
    Ok(grad)
}

/// Density-matrix oracle: evolve ρ → UρU† gate by gate, tracing each
/// listed qubit out immediately after its final gate (qubits never
/// touched are traced before the first gate), then read the output
/// qubit's diagonal. Capped at 4 qubits.
pub fn density_pooling_oracle(
    program: &CircuitProgram,
    params: &[f64],
    input: &StateVector,
    traced_qubits: &[usize],
) -> Result<(f64, f64)> {
    let bound = bind(program, params)?;
    for &q in traced_qubits {
        if q == program.output_qubit {
            return Err(Error::Domain(
                "traced qubits must exclude the output qubit".into(),
            ));
        }
        if q >= program.num_qubits {
            return Err(Error::QubitOutOfRange {
                index: q,
                num_qubits: program.num_qubits,
            });
        }
    }
    let last_touch: Vec<Option<usize>> = traced_qubits
        .iter()
        .map(|&q| {
            program
                .gates
                .iter()
                .enumerate()
                .filter(|(_, g)| g.qubits.contains(&q))
                .map(|(j, _)| j)
                .last()
        })
        .collect();

    let mut rho = DensityMatrix::from_state(input)?;
    for (&q, touch) in traced_qubits.iter().zip(&last_touch) {
        if touch.is_none() {
            rho.partial_trace(q)?;
        }
    }
    for (j, (g, m)) in program.gates.iter().zip(&bound.mats).enumerate() {
        rho.apply_gate(m, &g.qubits)?;
        for (&q, touch) in traced_qubits.iter().zip(&last_touch) {
            if *touch == Some(j) {
                rho.partial_trace(q)?;
            }
        }
    }
    rho.diagonal_marginal(program.output_qubit)
}
