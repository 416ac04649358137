//! Gate matrices: fixed gates, parameterized rotations, the five-factor
//! u3 gate, and small complex-matrix helpers shared by the simulator and
//! the ansatz catalog.
//!
//! Two-qubit matrices are written in the basis |q_first q_second⟩ with the
//! first listed qubit as the high bit of the 2-bit index, matching the
//! simulator's convention that qubit 0 is the most significant bit of the
//! basis-state index.

use num_complex::Complex64;

pub type C = Complex64;
pub type Mat2 = [[C; 2]; 2];
pub type Mat4 = [[C; 4]; 4];

pub const ZERO: C = C::new(0.0, 0.0);
pub const ONE: C = C::new(1.0, 0.0);
pub const I: C = C::new(0.0, 1.0);

/// A 1- or 2-qubit unitary (derivative matrices reuse the container but
/// are not unitary).
#[derive(Clone, Debug, PartialEq)]
pub enum GateMatrix {
    One(Mat2),
    Two(Mat4),
}

impl GateMatrix {
    pub fn arity(&self) -> usize {
        match self {
            GateMatrix::One(_) => 1,
            GateMatrix::Two(_) => 2,
        }
    }

    pub fn dagger(&self) -> GateMatrix {
        match self {
            GateMatrix::One(m) => GateMatrix::One(dag2(m)),
            GateMatrix::Two(m) => GateMatrix::Two(dag4(m)),
        }
    }

    /// Max entrywise deviation of U·U† from the identity.
    pub fn unitarity_error(&self) -> f64 {
        match self {
            GateMatrix::One(m) => {
                let p = mul2(m, &dag2(m));
                max_dev_from_eye(&p.concat())
            }
            GateMatrix::Two(m) => {
                let p = mul4(m, &dag4(m));
                max_dev_from_eye(&p.concat())
            }
        }
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() < tol
    }
}

fn max_dev_from_eye(flat: &[C]) -> f64 {
    let n = (flat.len() as f64).sqrt() as usize;
    let mut dev: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let want = if r == c { ONE } else { ZERO };
            dev = dev.max((flat[r * n + c] - want).norm());
        }
    }
    dev
}

pub fn eye2() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn eye4() -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

pub fn mul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += a[r][k] * b[k][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

pub fn dag2(m: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = m[c][r].conj();
        }
    }
    out
}

pub fn dag4(m: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = m[c][r].conj();
        }
    }
    out
}

/// Tensor product; `a` acts on the first (high-bit) qubit.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for ar in 0..2 {
        for ac in 0..2 {
            for br in 0..2 {
                for bc in 0..2 {
                    out[2 * ar + br][2 * ac + bc] = a[ar][ac] * b[br][bc];
                }
            }
        }
    }
    out
}

/// Block-diagonal two-qubit gate controlled on the first qubit:
/// the |0⟩ subspace gets `v0`, the |1⟩ subspace gets `v1`.
pub fn controlled_pair(v0: &Mat2, v1: &Mat2) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = v0[r][c];
            out[2 + r][2 + c] = v1[r][c];
        }
    }
    out
}

pub fn pauli_x() -> Mat2 {
    [[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Mat2 {
    [[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> Mat2 {
    [[ONE, ZERO], [ZERO, -ONE]]
}

pub fn hadamard() -> Mat2 {
    let s = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[s, s], [s, -s]]
}

/// CNOT with the first listed qubit as control.
pub fn cnot() -> Mat4 {
    controlled_pair(&eye2(), &pauli_x())
}

pub fn cz() -> Mat4 {
    controlled_pair(&eye2(), &pauli_z())
}

pub fn rx(theta: f64) -> Mat2 {
    let c = C::new((theta / 2.0).cos(), 0.0);
    let s = C::new(0.0, -(theta / 2.0).sin());
    [[c, s], [s, c]]
}

pub fn ry(theta: f64) -> Mat2 {
    let c = C::new((theta / 2.0).cos(), 0.0);
    let s = C::new((theta / 2.0).sin(), 0.0);
    [[c, -s], [s, c]]
}

pub fn rz(theta: f64) -> Mat2 {
    [
        [C::from_polar(1.0, -theta / 2.0), ZERO],
        [ZERO, C::from_polar(1.0, theta / 2.0)],
    ]
}

pub fn d_rx(theta: f64) -> Mat2 {
    let c = C::new(-(theta / 2.0).sin() / 2.0, 0.0);
    let s = C::new(0.0, -(theta / 2.0).cos() / 2.0);
    [[c, s], [s, c]]
}

pub fn d_ry(theta: f64) -> Mat2 {
    let c = C::new(-(theta / 2.0).sin() / 2.0, 0.0);
    let s = C::new((theta / 2.0).cos() / 2.0, 0.0);
    [[c, -s], [s, c]]
}

pub fn d_rz(theta: f64) -> Mat2 {
    [
        [C::from_polar(0.5, -theta / 2.0) * (-I), ZERO],
        [ZERO, C::from_polar(0.5, theta / 2.0) * I],
    ]
}

/// General SU(2) gate as the five-factor product
/// Rz(φ)·Rx(−π/2)·Rz(θ)·Rx(π/2)·Rz(λ).
pub fn u3(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let half = std::f64::consts::FRAC_PI_2;
    mul2(
        &mul2(&rz(phi), &rx(-half)),
        &mul2(&mul2(&rz(theta), &rx(half)), &rz(lambda)),
    )
}

/// Partial derivatives of [`u3`] with respect to (θ, φ, λ).
pub fn u3_derivs(theta: f64, phi: f64, lambda: f64) -> [Mat2; 3] {
    let half = std::f64::consts::FRAC_PI_2;
    let d_theta = mul2(
        &mul2(&rz(phi), &rx(-half)),
        &mul2(&mul2(&d_rz(theta), &rx(half)), &rz(lambda)),
    );
    let d_phi = mul2(
        &mul2(&d_rz(phi), &rx(-half)),
        &mul2(&mul2(&rz(theta), &rx(half)), &rz(lambda)),
    );
    let d_lambda = mul2(
        &mul2(&rz(phi), &rx(-half)),
        &mul2(&mul2(&rz(theta), &rx(half)), &d_rz(lambda)),
    );
    [d_theta, d_phi, d_lambda]
}

fn pauli_pair(p: &Mat2) -> Mat4 {
    kron(p, p)
}

/// Canonical two-qubit interaction exp(i(a·XX + b·YY + c·ZZ)), evaluated
/// as the product of its three commuting factors cos·I + i·sin·PP.
pub fn canonical_n(a: f64, b: f64, c: f64) -> Mat4 {
    let fac = |angle: f64, pp: &Mat4| -> Mat4 {
        let mut m = [[ZERO; 4]; 4];
        let (s, co) = angle.sin_cos();
        for r in 0..4 {
            for cc in 0..4 {
                m[r][cc] = pp[r][cc] * C::new(0.0, s);
            }
            m[r][r] += C::new(co, 0.0);
        }
        m
    };
    let xx = fac(a, &pauli_pair(&pauli_x()));
    let yy = fac(b, &pauli_pair(&pauli_y()));
    let zz = fac(c, &pauli_pair(&pauli_z()));
    mul4(&mul4(&xx, &yy), &zz)
}

/// Derivatives of [`canonical_n`]: d/da = i·XX·N and cyclically.
pub fn canonical_n_derivs(a: f64, b: f64, c: f64) -> [Mat4; 3] {
    let n = canonical_n(a, b, c);
    let scaled = |p: &Mat2| -> Mat4 {
        let pp = pauli_pair(p);
        let mut out = [[ZERO; 4]; 4];
        for r in 0..4 {
            for cc in 0..4 {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += pp[r][k] * n[k][cc];
                }
                out[r][cc] = I * acc;
            }
        }
        out
    };
    [scaled(&pauli_x()), scaled(&pauli_y()), scaled(&pauli_z())]
}

/// The fixed magic basis: columns are the Bell-like states under which
/// SU(2)⊗SU(2) becomes SO(4) by conjugation M†·U·M.
pub fn magic_basis() -> Mat4 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = C::new(s, 0.0);
    let i = C::new(0.0, s);
    [
        [r, ZERO, ZERO, i],
        [ZERO, i, r, ZERO],
        [ZERO, i, -r, ZERO],
        [r, ZERO, ZERO, -i],
    ]
}
