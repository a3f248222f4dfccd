//! Time evolution `ψ(t) = e^{−iHt}ψ0` for real symmetric Hamiltonians.
//!
//! Two engines: a dense spectral propagator (one eigendecomposition, then
//! analytic phases for every time) and a matrix-free short-iterative Lanczos
//! propagator with adaptive step size.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_model::{norm, Operator, C64};

/// Eigenvalues closer than this (relative to the spectral scale) count as
/// degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Sorted eigendecomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct DenseSpectral {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl DenseSpectral {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Eigensolver("matrix has non-finite entries".into()));
        }
        let eig = SymmetricEigen::try_new(m.clone(), 1e-15, 0)
            .ok_or_else(|| Error::Eigensolver("symmetric eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..m.nrows()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn gap(&self) -> GapInfo {
        GapInfo::from_sorted(&self.eigenvalues)
    }

    /// Coefficients of `psi` in the eigenbasis.
    pub fn decompose(&self, psi: &[C64]) -> Result<Vec<C64>> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.len(),
            });
        }
        let v = &self.eigenvectors;
        Ok((0..self.dim())
            .map(|c| {
                let col = v.column(c);
                col.iter().zip(psi).map(|(&a, &p)| p * a).sum()
            })
            .collect())
    }

    /// `ψ(t)` from eigenbasis coefficients.
    pub fn state_at(&self, coeffs: &[C64], t: f64) -> Vec<C64> {
        let dim = self.dim();
        let phased: Vec<C64> = coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, &e)| c * C64::from_polar(1.0, -e * t))
            .collect();
        let v = &self.eigenvectors;
        let mut out = vec![zero(); dim];
        for (c, p) in phased.iter().enumerate() {
            if p.norm_sqr() == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(v.column(c).iter()) {
                *o += p * a;
            }
        }
        out
    }

    pub fn evolve(&self, psi0: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        check_times(times)?;
        let coeffs = self.decompose(psi0)?;
        Ok(times.iter().map(|&t| self.state_at(&coeffs, t)).collect())
    }
}

/// Ground-state gap with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapInfo {
    pub ground_energy: f64,
    /// First eigenvalue strictly above the ground level minus the ground
    /// energy; zero for a one-dimensional space.
    pub gap: f64,
    pub degenerate_ground: bool,
}

impl GapInfo {
    pub fn from_sorted(evals: &[f64]) -> Self {
        let e0 = evals.first().copied().unwrap_or(0.0);
        let scale = evals.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        let tol = DEGENERACY_TOL * scale;
        let above = evals.iter().copied().find(|&e| e - e0 > tol);
        let degenerate_ground = evals.len() > 1 && evals[1] - e0 <= tol;
        Self {
            ground_energy: e0,
            gap: above.map_or(0.0, |e| e - e0),
            degenerate_ground,
        }
    }
}

/// `E1 − E0` of a dense real symmetric matrix.
pub fn spectral_gap(m: &DMatrix<f64>) -> Result<GapInfo> {
    Ok(DenseSpectral::new(m)?.gap())
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("time grid must be ascending".into()));
    }
    Ok(())
}

/// Dense matrix of an operator, read column by column.
pub fn operator_to_dense(op: &dyn Operator, limit: usize) -> Result<DMatrix<f64>> {
    let dim = op.dim();
    if dim > limit {
        return Err(Error::TooLarge { dim, limit });
    }
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![zero(); dim];
    let mut col = vec![zero(); dim];
    for c in 0..dim {
        e[c] = C64::new(1.0, 0.0);
        op.apply_into(&e, &mut col);
        for r in 0..dim {
            m[(r, c)] = col[r].re;
        }
        e[c] = zero();
    }
    Ok(m)
}

/// Settings of the Lanczos propagator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    /// Krylov subspace dimension per step.
    pub subspace: usize,
    /// Accepted local error estimate per step.
    pub tol: f64,
    /// Smallest step before giving up.
    pub min_step: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            subspace: 30,
            tol: 1e-13,
            min_step: 1e-12,
        }
    }
}

struct Lanczos {
    basis: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Norm of the residual after the last basis vector.
    residual: f64,
}

fn lanczos(op: &dyn Operator, v0: &[C64], m: usize) -> Lanczos {
    let dim = v0.len();
    let nrm = norm(v0);
    let mut basis = vec![v0.iter().map(|a| a / nrm).collect::<Vec<_>>()];
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut w = vec![zero(); dim];
    let mut residual = 0.0;
    for j in 0..m {
        op.apply_into(&basis[j], &mut w);
        let a: f64 = basis[j].iter().zip(&w).map(|(v, x)| (v.conj() * x).re).sum();
        for (x, v) in w.iter_mut().zip(&basis[j]) {
            *x -= v * a;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (x, v) in w.iter_mut().zip(&basis[j - 1]) {
                *x -= v * b;
            }
        }
        // Full reorthogonalization keeps the small basis well conditioned.
        for v in &basis {
            let p: C64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
            for (x, vi) in w.iter_mut().zip(v) {
                *x -= vi * p;
            }
        }
        alpha.push(a);
        let b = norm(&w);
        residual = b;
        if j + 1 == m || b < 1e-14 * (1.0 + a.abs()) {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Lanczos {
        basis,
        alpha,
        beta,
        residual,
    }
}

/// `e^{−iT dt} e1` for the Lanczos tridiagonal `T`.
fn small_exp(alpha: &[f64], beta: &[f64], dt: f64) -> Result<Vec<C64>> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::try_new(t, 1e-15, 0)
        .ok_or_else(|| Error::Eigensolver("Lanczos tridiagonal did not converge".into()))?;
    let v = &eig.eigenvectors;
    Ok((0..k)
        .map(|r| {
            (0..k)
                .map(|c| C64::from_polar(v[(r, c)] * v[(0, c)], -eig.eigenvalues[c] * dt))
                .sum()
        })
        .collect())
}

/// Short-iterative Lanczos propagation to each requested time.
pub fn krylov_evolve(
    op: &dyn Operator,
    psi0: &[C64],
    times: &[f64],
    opts: KrylovOptions,
) -> Result<Vec<Vec<C64>>> {
    check_times(times)?;
    if psi0.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: psi0.len(),
        });
    }
    let mut psi = psi0.to_vec();
    let mut now = 0.0;
    let mut step = f64::INFINITY;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target < now {
            return Err(Error::InvalidArgument("times must start at or after zero".into()));
        }
        while target - now > 0.0 {
            let nrm = norm(&psi);
            if nrm == 0.0 {
                break;
            }
            let lz = lanczos(op, &psi, opts.subspace.max(2));
            let k = lz.alpha.len();
            let mut dt = (target - now).min(step);
            loop {
                let y = small_exp(&lz.alpha, &lz.beta, dt)?;
                // Standard a-posteriori estimate: residual times last entry.
                let err = if lz.basis.len() < opts.subspace.max(2) && lz.residual < 1e-14 {
                    0.0
                } else {
                    lz.residual * y[k - 1].norm() * nrm
                };
                if err <= opts.tol {
                    let mut next = vec![zero(); psi.len()];
                    for (yi, v) in y.iter().zip(&lz.basis) {
                        for (o, a) in next.iter_mut().zip(v) {
                            *o += a * yi;
                        }
                    }
                    next.iter_mut().for_each(|a| *a *= nrm);
                    psi = next;
                    now = if dt == target - now { target } else { now + dt };
                    step = if err < 0.1 * opts.tol { dt * 1.5 } else { dt };
                    break;
                }
                dt *= 0.5;
                if dt < opts.min_step {
                    return Err(Error::KrylovNonConvergence {
                        tol: opts.tol,
                        step: dt,
                    });
                }
            }
        }
        out.push(psi.clone());
    }
    Ok(out)
}

/// Which propagation engine to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Krylov,
    /// Dense up to [`AUTO_DENSE_DIM`], Krylov above.
    Auto,
}

/// Largest dimension the automatic choice sends to the dense engine.
pub const AUTO_DENSE_DIM: usize = 1 << 10;

/// Evolves `psi0` under `op`, choosing an engine by `method`.
pub fn evolve(op: &dyn Operator, psi0: &[C64], times: &[f64], method: Method) -> Result<Vec<Vec<C64>>> {
    let dense = match method {
        Method::Dense => true,
        Method::Krylov => false,
        Method::Auto => op.dim() <= AUTO_DENSE_DIM,
    };
    if dense {
        let m = operator_to_dense(op, crate::spin_model::DEFAULT_DENSE_LIMIT)?;
        DenseSpectral::new(&m)?.evolve(psi0, times)
    } else {
        krylov_evolve(op, psi0, times, KrylovOptions::default())
    }
}

/// `⟨ψ|H|ψ⟩`.
pub fn expectation(op: &dyn Operator, psi: &[C64]) -> f64 {
    let mut h = vec![zero(); psi.len()];
    op.apply_into(psi, &mut h);
    psi.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum()
}

/// `n` evenly spaced points over `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::spin_model::{IsingXZHamiltonian, MatrixFreeOperator, PauliTerm, QubitLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_dev(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let m = DMatrix::<f64>::zeros(4, 4);
        let psi0 = vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5), C64::new(0.5, 0.0), C64::new(0.0, -0.5)];
        let times = linspace(0.0, 10.0, 5);
        for s in DenseSpectral::new(&m).unwrap().evolve(&psi0, &times).unwrap() {
            assert!(max_dev(&s, &psi0) < 1e-15);
        }
        for s in krylov_evolve(&m, &psi0, &times, KrylovOptions::default()).unwrap() {
            assert!(max_dev(&s, &psi0) < 1e-15);
        }
    }

    #[test]
    fn rabi_oscillation() {
        let g = 0.7;
        let h = IsingXZHamiltonian::from_terms(QubitLayout::new(1, 0).unwrap(), vec![PauliTerm::x(0, -g)])
            .unwrap();
        let op = MatrixFreeOperator::new(&h);
        let psi0 = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let times = linspace(0.0, 5.0, 50);
        for method in [Method::Dense, Method::Krylov] {
            let states = evolve(&op, &psi0, &times, method).unwrap();
            for (s, t) in states.iter().zip(&times) {
                assert!((s[1].norm_sqr() - (g * t).sin().powi(2)).abs() < 1e-12, "{method:?}");
            }
        }
    }

    #[test]
    fn gaps() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((spectral_gap(&m).unwrap().gap - 1.0).abs() < 1e-15);
        let g = 0.3;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -g, -g, 0.0]);
        assert!((spectral_gap(&m).unwrap().gap - 2.0 * g).abs() < 1e-15);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0, -1.0, 3.0]));
        let info = spectral_gap(&m).unwrap();
        assert!(info.degenerate_ground);
        assert!((info.gap - 3.0).abs() < 1e-15);
        assert_eq!(info.ground_energy, -1.0);
    }

    #[test]
    fn dense_and_krylov_agree_on_random_ising() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = QubitLayout::gadget(4).unwrap();
        let nq = l.n_qubits();
        let mut terms = Vec::new();
        for a in 0..nq {
            terms.push(PauliTerm::z(a, rng.random_range(-1.0..1.0)));
            terms.push(PauliTerm::x(a, rng.random_range(-0.5..0.5)));
            for b in a + 1..nq {
                terms.push(PauliTerm::zz(a, b, rng.random_range(-1.0..1.0)));
            }
        }
        let h = IsingXZHamiltonian::from_terms(l, terms).unwrap();
        let op = MatrixFreeOperator::new(&h);
        let mut psi0: Vec<C64> = (0..l.dim())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let nrm = norm(&psi0);
        psi0.iter_mut().for_each(|a| *a /= nrm);
        let times = linspace(0.0, 20.0, 40);
        let a = evolve(&op, &psi0, &times, Method::Dense).unwrap();
        let b = evolve(&op, &psi0, &times, Method::Krylov).unwrap();
        let e0 = expectation(&op, &psi0);
        for (x, y) in a.iter().zip(&b) {
            assert!(max_dev(x, y) < 1e-8);
            assert!((norm(x) - 1.0).abs() < 1e-10 && (norm(y) - 1.0).abs() < 1e-10);
            assert!((expectation(&op, y) - e0).abs() < 1e-9 * e0.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let m = DMatrix::<f64>::identity(2, 2);
        let psi = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert!(DenseSpectral::new(&m).unwrap().evolve(&psi, &[1.0, 0.5]).is_err());
        assert!(krylov_evolve(&m, &psi, &[f64::NAN], KrylovOptions::default()).is_err());
        assert!(DenseSpectral::new(&m).unwrap().evolve(&psi[..1], &[0.0]).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let t = linspace(0.0, 2.0, 5);
        assert_eq!(t, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }
}
