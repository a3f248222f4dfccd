//! Gate schedules for Ising evolution on conditional-phase hardware.
//!
//! Gate conventions:
//!
//! ```text
//! U_cp(θ) = diag(1, 1, 1, e^{−iθ})      R_z(θ) = e^{−iθZ/2}      R_x(θ) = e^{−iθX/2}
//! ```
//!
//! With `Ĉ = (1 − Z)/2` the projector on `|1⟩`, `Z_iZ_j = 4Ĉ_iĈ_j − 2(Ĉ_i + Ĉ_j) + 1`
//! and `Z = 1 − 2Ĉ` give the exact identity
//!
//! ```text
//! e^{−iφZ_iZ_j} = e^{iφ} · U_cp(4φ)_{ij} · R_z(2φ)_i · R_z(2φ)_j
//! ```
//!
//! A schedule stores that scalar in `global_phase`: the target unitary is
//! `e^{i·global_phase}` times the product of its gates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_model::{Axis, IsingXZHamiltonian, PauliTerm, QubitLayout, C64};

/// Largest register for dense unitary verification.
pub const MAX_VERIFY_QUBITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    CondPhase,
    ZRot,
    XRot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angle: f64,
}

impl GateOp {
    pub fn cond_phase(i: usize, j: usize, angle: f64) -> Self {
        Self {
            kind: GateKind::CondPhase,
            qubits: vec![i, j],
            angle,
        }
    }

    pub fn z_rot(q: usize, angle: f64) -> Self {
        Self {
            kind: GateKind::ZRot,
            qubits: vec![q],
            angle,
        }
    }

    pub fn x_rot(q: usize, angle: f64) -> Self {
        Self {
            kind: GateKind::XRot,
            qubits: vec![q],
            angle,
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let arity = if self.kind == GateKind::CondPhase { 2 } else { 1 };
        if self.qubits.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{:?} needs {arity} qubit(s), got {:?}",
                self.kind, self.qubits
            )));
        }
        if arity == 2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::InvalidArgument("conditional phase on a repeated qubit".into()));
        }
        if let Some(&q) = self.qubits.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::IndexOutOfRange { index: q, dim: n_qubits });
        }
        if !self.angle.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite angle {}", self.angle)));
        }
        Ok(())
    }

    /// Applies the gate to a state vector in place.
    fn apply(&self, psi: &mut [C64]) {
        match self.kind {
            GateKind::CondPhase => {
                let mask = (1 << self.qubits[0]) | (1 << self.qubits[1]);
                let ph = C64::from_polar(1.0, -self.angle);
                for (i, a) in psi.iter_mut().enumerate() {
                    if i & mask == mask {
                        *a *= ph;
                    }
                }
            }
            GateKind::ZRot => {
                let bit = 1 << self.qubits[0];
                let p0 = C64::from_polar(1.0, -self.angle / 2.0);
                let p1 = p0.conj();
                for (i, a) in psi.iter_mut().enumerate() {
                    *a *= if i & bit == 0 { p0 } else { p1 };
                }
            }
            GateKind::XRot => {
                let bit = 1 << self.qubits[0];
                let c = C64::new((self.angle / 2.0).cos(), 0.0);
                let s = C64::new(0.0, -(self.angle / 2.0).sin());
                for i in 0..psi.len() {
                    if i & bit == 0 {
                        let (a, b) = (psi[i], psi[i | bit]);
                        psi[i] = c * a + s * b;
                        psi[i | bit] = s * a + c * b;
                    }
                }
            }
        }
    }
}

/// Ordered gate list; the first op acts first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    pub n_qubits: usize,
    pub ops: Vec<GateOp>,
    pub global_phase: f64,
}

impl GateSchedule {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            ops: Vec::new(),
            global_phase: 0.0,
        }
    }

    pub fn push(&mut self, op: GateOp) -> Result<()> {
        op.validate(self.n_qubits)?;
        self.ops.push(op);
        Ok(())
    }

    /// Appends `other`, adding its global phase.
    pub fn append(&mut self, other: GateSchedule) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: other.n_qubits,
            });
        }
        self.ops.extend(other.ops);
        self.global_phase += other.global_phase;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sched: Self = serde_json::from_str(s)?;
        for op in &sched.ops {
            op.validate(sched.n_qubits)?;
        }
        if !sched.global_phase.is_finite() {
            return Err(Error::InvalidArgument("non-finite global phase".into()));
        }
        Ok(sched)
    }

    /// Applies the schedule, global phase included, to a state in place.
    pub fn apply_to(&self, psi: &mut [C64]) -> Result<()> {
        if psi.len() != 1usize << self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: 1 << self.n_qubits,
                got: psi.len(),
            });
        }
        for op in &self.ops {
            op.apply(psi);
        }
        let ph = C64::from_polar(1.0, self.global_phase);
        psi.iter_mut().for_each(|a| *a *= ph);
        Ok(())
    }

    /// Dense unitary of the gate product, without the global phase.
    pub fn unitary(&self) -> Result<DMatrix<C64>> {
        if self.n_qubits > MAX_VERIFY_QUBITS {
            return Err(Error::TooLarge {
                dim: self.n_qubits,
                limit: MAX_VERIFY_QUBITS,
            });
        }
        let dim = 1usize << self.n_qubits;
        let mut u = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        let mut col = vec![C64::new(0.0, 0.0); dim];
        for c in 0..dim {
            col.iter_mut().for_each(|a| *a = C64::new(0.0, 0.0));
            col[c] = C64::new(1.0, 0.0);
            for op in &self.ops {
                op.apply(&mut col);
            }
            for r in 0..dim {
                u[(r, c)] = col[r];
            }
        }
        Ok(u)
    }

    /// `e^{i·global_phase}` times [`GateSchedule::unitary`].
    pub fn unitary_with_phase(&self) -> Result<DMatrix<C64>> {
        Ok(self.unitary()? * C64::from_polar(1.0, self.global_phase))
    }
}

/// Schedule implementing `e^{−iφ Z_iZ_j}` on an `n_qubits` register.
pub fn zz_to_condphase(phi: f64, i: usize, j: usize, n_qubits: usize) -> Result<GateSchedule> {
    if i == j {
        return Err(Error::InvalidArgument(format!("ZZ gate on repeated qubit {i}")));
    }
    if !phi.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite angle {phi}")));
    }
    let mut s = GateSchedule::new(n_qubits);
    if phi == 0.0 {
        return Ok(s);
    }
    s.push(GateOp::cond_phase(i, j, 4.0 * phi))?;
    s.push(GateOp::z_rot(i, 2.0 * phi))?;
    s.push(GateOp::z_rot(j, 2.0 * phi))?;
    s.global_phase = phi;
    Ok(s)
}

/// First-order product formula: each step applies every `Z1` term, then
/// every `Z2` term, then every `X1` term. Zero angles are elided.
pub fn trotterize(h: &IsingXZHamiltonian, dt: f64, steps: usize) -> Result<GateSchedule> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let nq = h.layout.n_qubits();
    let mut step = GateSchedule::new(nq);
    for axis in [Axis::Z1, Axis::Z2, Axis::X1] {
        for t in h.terms.iter().filter(|t| t.axis == axis) {
            let theta = t.coeff * dt;
            if theta == 0.0 {
                continue;
            }
            match t.axis {
                Axis::Z1 => step.push(GateOp::z_rot(t.qubits[0], 2.0 * theta))?,
                Axis::Z2 => step.append(zz_to_condphase(theta, t.qubits[0], t.qubits[1], nq)?)?,
                Axis::X1 => step.push(GateOp::x_rot(t.qubits[0], 2.0 * theta))?,
            }
        }
    }
    let mut s = GateSchedule::new(nq);
    for _ in 0..steps {
        s.append(step.clone())?;
    }
    Ok(s)
}

/// `e^{−iHt}` of a real symmetric matrix.
pub fn exact_unitary(h: &DMatrix<f64>, t: f64) -> Result<DMatrix<C64>> {
    let spec = crate::propagate::DenseSpectral::new(h)?;
    let v = spec.eigenvectors.map(|x| C64::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        spec.dim(),
        spec.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)),
    ));
    Ok(&v * phases * v.transpose())
}

fn singular_values(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    let svd = m.clone().try_svd(false, false, 1e-15, 0).ok_or_else(|| Error::Eigensolver("SVD did not converge".into()))?;
    Ok(svd.singular_values.iter().copied().collect())
}

/// `‖A − B‖₁`, the sum of singular values of the difference.
pub fn trace_norm_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    Ok(singular_values(&(a - b))?.iter().sum())
}

/// `‖A − B‖₂`, the largest singular value of the difference.
pub fn spectral_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    Ok(singular_values(&(a - b))?.iter().copied().fold(0.0, f64::max))
}

/// Spectral distance between `e^{−iH·dt·steps}` and the Trotter schedule.
pub fn trotter_error(h: &IsingXZHamiltonian, dt: f64, steps: usize) -> Result<f64> {
    let exact = exact_unitary(&h.build_dense()?, dt * steps as f64)?;
    let approx = trotterize(h, dt, steps)?.unitary_with_phase()?;
    spectral_distance(&exact, &approx)
}

/// First-order Trotter bound `(t·dt/2)‖[A, B]‖₂` for the diagonal part `A`
/// and transverse part `B`.
pub fn trotter_bound(h: &IsingXZHamiltonian, dt: f64, steps: usize) -> Result<f64> {
    let a = h.diagonal_part().build_dense()?;
    let b = h.off_diagonal_part().build_dense()?;
    let comm = (&a * &b - &b * &a).map(|x| C64::new(x, 0.0));
    let zero = DMatrix::from_element(comm.nrows(), comm.ncols(), C64::new(0.0, 0.0));
    Ok(0.5 * dt * dt * steps as f64 * spectral_distance(&comm, &zero)?)
}

/// Looser bound that avoids dense matrices: `‖[A, X_q]‖` is the largest
/// diagonal jump across a flip of qubit `q`, summed with `|c_q|` weights.
pub fn trotter_bound_matrix_free(h: &IsingXZHamiltonian, dt: f64, steps: usize) -> f64 {
    let diag = h.diagonal();
    let comm: f64 = h
        .flip_table()
        .iter()
        .map(|&(q, c)| {
            let bit = 1usize << q;
            let jump = (0..diag.len())
                .map(|i| (diag[i] - diag[i ^ bit]).abs())
                .fold(0.0, f64::max);
            c.abs() * jump
        })
        .sum();
    0.5 * dt * dt * steps as f64 * comm
}

/// A quadratic binary objective `Σ_{i<j} Q_ij x_i x_j + Σ_i c_i x_i + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qubo {
    /// Strictly upper-triangular couplings.
    pub quad: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl Qubo {
    /// From an upper-triangular matrix; diagonal entries become linear
    /// terms since `x² = x`.
    pub fn from_matrix(q: &DMatrix<f64>, c: &[f64]) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.ncols(),
            });
        }
        if c.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: c.len(),
            });
        }
        if q.iter().chain(c).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("QUBO entries must be finite".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if q[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!("Q[{i},{j}] lies below the diagonal")));
                }
            }
        }
        let mut quad = q.clone();
        let mut linear = c.to_vec();
        for i in 0..n {
            linear[i] += quad[(i, i)];
            quad[(i, i)] = 0.0;
        }
        Ok(Self {
            quad,
            linear,
            constant: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    /// Objective value for the assignment whose bit `i` is `x_i`.
    pub fn energy(&self, x: usize) -> f64 {
        let bit = |i: usize| ((x >> i) & 1) as f64;
        let n = self.n();
        let mut e = self.constant;
        for i in 0..n {
            e += self.linear[i] * bit(i);
            for j in i + 1..n {
                e += self.quad[(i, j)] * bit(i) * bit(j);
            }
        }
        e
    }
}

/// `Σ_{i<j} J_ij z_i z_j + Σ_i h_i z_i + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    /// Strictly upper-triangular couplings.
    pub couplings: DMatrix<f64>,
    pub fields: Vec<f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn n(&self) -> usize {
        self.fields.len()
    }

    /// Energy with `z_i = 1 − 2x_i` for the bits of `x`.
    pub fn energy(&self, x: usize) -> f64 {
        let z = |i: usize| 1.0 - 2.0 * ((x >> i) & 1) as f64;
        let n = self.n();
        let mut e = self.offset;
        for i in 0..n {
            e += self.fields[i] * z(i);
            for j in i + 1..n {
                e += self.couplings[(i, j)] * z(i) * z(j);
            }
        }
        e
    }

    /// The model as Pauli terms on `n` qubits (offset dropped).
    pub fn to_hamiltonian(&self) -> Result<IsingXZHamiltonian> {
        let n = self.n();
        let mut terms = Vec::new();
        for i in 0..n {
            if self.fields[i] != 0.0 {
                terms.push(PauliTerm::z(i, self.fields[i]));
            }
            for j in i + 1..n {
                if self.couplings[(i, j)] != 0.0 {
                    terms.push(PauliTerm::zz(i, j, self.couplings[(i, j)]));
                }
            }
        }
        IsingXZHamiltonian::from_terms(QubitLayout::new(n, 0)?, terms)
    }
}

/// Substitutes `x = (1 − z)/2`; `QUBO(x) = Ising(z)` including the offset.
pub fn qubo_to_ising(q: &Qubo) -> IsingModel {
    let n = q.n();
    let mut couplings = DMatrix::zeros(n, n);
    let mut fields = vec![0.0; n];
    let mut offset = q.constant;
    for i in 0..n {
        let a = q.linear[i];
        fields[i] -= a / 2.0;
        offset += a / 2.0;
        for j in i + 1..n {
            let w = q.quad[(i, j)];
            couplings[(i, j)] += w / 4.0;
            fields[i] -= w / 4.0;
            fields[j] -= w / 4.0;
            offset += w / 4.0;
        }
    }
    IsingModel {
        couplings,
        fields,
        offset,
    }
}

/// Inverse of [`qubo_to_ising`], substituting `z = 1 − 2x`.
pub fn ising_to_qubo(m: &IsingModel) -> Qubo {
    let n = m.n();
    let mut quad = DMatrix::zeros(n, n);
    let mut linear = vec![0.0; n];
    let mut constant = m.offset;
    for i in 0..n {
        let h = m.fields[i];
        linear[i] -= 2.0 * h;
        constant += h;
        for j in i + 1..n {
            let w = m.couplings[(i, j)];
            quad[(i, j)] += 4.0 * w;
            linear[i] -= 2.0 * w;
            linear[j] -= 2.0 * w;
            constant += w;
        }
    }
    Qubo {
        quad,
        linear,
        constant,
    }
}

/// Dipolar angular factor `3cos²θ − 1`.
pub fn angular_factor(theta: f64) -> f64 {
    3.0 * theta.cos().powi(2) - 1.0
}
