//! Qubit layouts, computational-basis indexing and Pauli-term Hamiltonians.
//!
//! Conventions used throughout the crate:
//!
//! * `Z|0⟩ = +|0⟩` and `Z|1⟩ = −|1⟩`, so a classical energy is evaluated with
//!   spin value `z = 1 − 2·bit`.
//! * Data qubit `i` (0-based) lives at bit `i` of a basis index; auxiliary
//!   qubit `i` (0-based, i.e. the `(i+1)`-th counter qubit) lives at bit
//!   `n_data + i`.
//! * Basis labels are printed `d…d|a…a` with qubit 1 of each register in the
//!   leftmost position, so `10|10` is data qubit 1 set and auxiliary qubit 1
//!   set.
//!
//! Hamiltonians are kept as term lists; dense matrices are derived views.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest register handled by the matrix-free routines.
pub const MAX_QUBITS: usize = 24;

/// Default ceiling on the dimension of a dense matrix view.
pub const DEFAULT_DENSE_LIMIT: usize = 1 << 13;

/// Below this dimension `apply` runs serially.
const PARALLEL_APPLY_DIM: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitLayout {
    pub n_data: usize,
    pub n_aux: usize,
}

impl QubitLayout {
    pub fn new(n_data: usize, n_aux: usize) -> Result<Self> {
        if n_data + n_aux > MAX_QUBITS {
            return Err(Error::TooLarge {
                dim: n_data + n_aux,
                limit: MAX_QUBITS,
            });
        }
        Ok(Self { n_data, n_aux })
    }

    /// Layout of a gadget: `n` data qubits and `n` auxiliary counters.
    pub fn gadget(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_data + self.n_aux
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits()
    }

    pub fn data_site(&self, i: usize) -> usize {
        debug_assert!(i < self.n_data);
        i
    }

    pub fn aux_site(&self, i: usize) -> usize {
        debug_assert!(i < self.n_aux);
        self.n_data + i
    }

    pub fn data_mask(&self) -> usize {
        (1 << self.n_data) - 1
    }

    pub fn data_bits(&self, index: usize) -> usize {
        index & self.data_mask()
    }

    pub fn aux_bits(&self, index: usize) -> usize {
        index >> self.n_data
    }

    pub fn compose(&self, data: usize, aux: usize) -> usize {
        data | (aux << self.n_data)
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.dim() {
            Err(Error::IndexOutOfRange {
                index,
                dim: self.dim(),
            })
        } else {
            Ok(())
        }
    }

    /// `d…d|a…a` label of a basis index.
    pub fn label(&self, index: usize) -> String {
        let mut s = bit_string(self.data_bits(index), self.n_data);
        if self.n_aux > 0 {
            s.push('|');
            s.push_str(&bit_string(self.aux_bits(index), self.n_aux));
        }
        s
    }

    pub fn parse_label(&self, label: &str) -> Result<usize> {
        let (data, aux) = match label.split_once('|') {
            Some((d, a)) => (d, a),
            None => (label, ""),
        };
        if data.len() != self.n_data || aux.len() != self.n_aux {
            return Err(Error::InvalidArgument(format!(
                "label {label:?} does not match a {}|{} layout",
                self.n_data, self.n_aux
            )));
        }
        let d = parse_bit_string(data)?;
        let a = parse_bit_string(aux)?;
        Ok(self.compose(d, a))
    }
}

/// Bits of `value` printed lowest bit first.
pub fn bit_string(value: usize, width: usize) -> String {
    (0..width)
        .map(|i| if (value >> i) & 1 == 1 { '1' } else { '0' })
        .collect()
}

fn parse_bit_string(s: &str) -> Result<usize> {
    s.chars().enumerate().try_fold(0usize, |acc, (i, c)| match c {
        '0' => Ok(acc),
        '1' => Ok(acc | (1 << i)),
        other => Err(Error::InvalidArgument(format!("bad bit character {other:?}"))),
    })
}

/// Number of set data bits of a basis index.
pub fn logical_hamming_weight(index: usize, layout: &QubitLayout) -> Result<usize> {
    layout.check(index)?;
    Ok(layout.data_bits(index).count_ones() as usize)
}

/// Number of data qubits on which two basis states differ.
pub fn logical_hamming_distance(r: usize, s: usize, layout: &QubitLayout) -> Result<usize> {
    layout.check(r)?;
    layout.check(s)?;
    Ok(layout.data_bits(r ^ s).count_ones() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    /// One-body `Z`.
    Z1,
    /// Two-body `Z⊗Z`.
    Z2,
    /// One-body `X`.
    X1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub axis: Axis,
    pub qubits: Vec<usize>,
    pub coeff: f64,
}

impl PauliTerm {
    pub fn z(q: usize, coeff: f64) -> Self {
        Self {
            axis: Axis::Z1,
            qubits: vec![q],
            coeff,
        }
    }

    pub fn zz(a: usize, b: usize, coeff: f64) -> Self {
        Self {
            axis: Axis::Z2,
            qubits: vec![a, b],
            coeff,
        }
    }

    pub fn x(q: usize, coeff: f64) -> Self {
        Self {
            axis: Axis::X1,
            qubits: vec![q],
            coeff,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.axis, Axis::Z1 | Axis::Z2)
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let arity = match self.axis {
            Axis::Z1 | Axis::X1 => 1,
            Axis::Z2 => 2,
        };
        if self.qubits.len() != arity {
            return Err(Error::InvalidTerm(format!(
                "{:?} term needs {arity} qubit(s), got {:?}",
                self.axis, self.qubits
            )));
        }
        if self.axis == Axis::Z2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::InvalidTerm(format!(
                "Z2 term on repeated qubit {}",
                self.qubits[0]
            )));
        }
        if let Some(&q) = self.qubits.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::InvalidTerm(format!(
                "qubit {q} outside a {n_qubits}-qubit register"
            )));
        }
        if !self.coeff.is_finite() {
            return Err(Error::InvalidTerm(format!("non-finite coefficient {}", self.coeff)));
        }
        Ok(())
    }

    /// Diagonal value on a basis state; zero for `X1`.
    fn diagonal_value(&self, index: usize) -> f64 {
        let z = |q: usize| 1.0 - 2.0 * ((index >> q) & 1) as f64;
        match self.axis {
            Axis::Z1 => self.coeff * z(self.qubits[0]),
            Axis::Z2 => self.coeff * z(self.qubits[0]) * z(self.qubits[1]),
            Axis::X1 => 0.0,
        }
    }
}

/// A named, contiguous run of terms recording which builder produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermGroup {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl TermGroup {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Real-coefficient Hamiltonian built from `Z`, `ZZ` and `X` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingXZHamiltonian {
    pub layout: QubitLayout,
    pub terms: Vec<PauliTerm>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<TermGroup>,
}

impl IsingXZHamiltonian {
    pub fn new(layout: QubitLayout) -> Self {
        Self {
            layout,
            terms: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn from_terms(layout: QubitLayout, terms: Vec<PauliTerm>) -> Result<Self> {
        let mut h = Self::new(layout);
        h.push_group("terms", terms)?;
        Ok(h)
    }

    pub fn push(&mut self, term: PauliTerm) -> Result<()> {
        term.validate(self.layout.n_qubits())?;
        self.terms.push(term);
        Ok(())
    }

    /// Appends `terms` under a group label.
    pub fn push_group(&mut self, label: &str, terms: Vec<PauliTerm>) -> Result<()> {
        let start = self.terms.len();
        for t in terms {
            self.push(t)?;
        }
        if self.terms.len() > start {
            self.groups.push(TermGroup {
                label: label.to_owned(),
                start,
                end: self.terms.len(),
            });
        }
        Ok(())
    }

    /// Concatenates another Hamiltonian on the same layout, keeping its groups.
    pub fn extend(&mut self, other: IsingXZHamiltonian) -> Result<()> {
        if other.layout != self.layout {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim(),
                got: other.layout.dim(),
            });
        }
        let offset = self.terms.len();
        self.terms.extend(other.terms);
        self.groups.extend(other.groups.into_iter().map(|g| TermGroup {
            label: g.label,
            start: g.start + offset,
            end: g.end + offset,
        }));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn group(&self, label: &str) -> Option<&[PauliTerm]> {
        self.groups
            .iter()
            .find(|g| g.label == label)
            .map(|g| &self.terms[g.range()])
    }

    pub fn count(&self, axis: Axis) -> usize {
        self.terms.iter().filter(|t| t.axis == axis).count()
    }

    /// Classical energy of a basis state from the `Z1`/`Z2` terms.
    pub fn diagonal_energy(&self, index: usize) -> Result<f64> {
        self.layout.check(index)?;
        Ok(self.diagonal_unchecked(index))
    }

    fn diagonal_unchecked(&self, index: usize) -> f64 {
        self.terms.iter().map(|t| t.diagonal_value(index)).sum()
    }

    /// Diagonal energies of every basis state.
    pub fn diagonal(&self) -> Vec<f64> {
        let dim = self.dim();
        if dim >= PARALLEL_APPLY_DIM {
            (0..dim)
                .into_par_iter()
                .map(|i| self.diagonal_unchecked(i))
                .collect()
        } else {
            (0..dim).map(|i| self.diagonal_unchecked(i)).collect()
        }
    }

    /// Only the diagonal terms.
    pub fn diagonal_part(&self) -> IsingXZHamiltonian {
        self.filtered(PauliTerm::is_diagonal)
    }

    /// Only the `X1` terms.
    pub fn off_diagonal_part(&self) -> IsingXZHamiltonian {
        self.filtered(|t| !t.is_diagonal())
    }

    fn filtered(&self, keep: impl Fn(&PauliTerm) -> bool) -> IsingXZHamiltonian {
        let mut out = IsingXZHamiltonian::new(self.layout);
        for g in &self.groups {
            let terms: Vec<_> = self.terms[g.range()].iter().filter(|t| keep(t)).cloned().collect();
            out.push_group(&g.label, terms).expect("terms were already validated");
        }
        // Terms outside any group (pushed individually).
        let grouped: usize = self.groups.iter().map(|g| g.end - g.start).sum();
        if grouped < self.terms.len() {
            let mut covered = vec![false; self.terms.len()];
            for g in &self.groups {
                covered[g.range()].iter_mut().for_each(|c| *c = true);
            }
            for (t, _) in self.terms.iter().zip(&covered).filter(|(t, c)| !**c && keep(t)) {
                out.terms.push(t.clone());
            }
        }
        out
    }

    /// Flip amplitudes `(qubit, coefficient)` of the `X1` terms, merged per qubit.
    pub fn flip_table(&self) -> Vec<(usize, f64)> {
        let mut per_qubit = vec![0.0; self.layout.n_qubits()];
        let mut seen = vec![false; self.layout.n_qubits()];
        for t in self.terms.iter().filter(|t| t.axis == Axis::X1) {
            per_qubit[t.qubits[0]] += t.coeff;
            seen[t.qubits[0]] = true;
        }
        (0..per_qubit.len())
            .filter(|&q| seen[q])
            .map(|q| (q, per_qubit[q]))
            .collect()
    }

    /// `H·ψ` without forming a matrix.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.dim(),
            });
        }
        let op = MatrixFreeOperator::new(self);
        let mut out = vec![C64::new(0.0, 0.0); psi.dim()];
        op.apply_into(&psi.amps, &mut out);
        Ok(StateVector { amps: out })
    }

    pub fn build_dense(&self) -> Result<DMatrix<f64>> {
        self.build_dense_with_limit(DEFAULT_DENSE_LIMIT)
    }

    pub fn build_dense_with_limit(&self, limit: usize) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if dim > limit {
            return Err(Error::TooLarge { dim, limit });
        }
        let diag = self.diagonal();
        let flips = self.flip_table();
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = diag[i];
            for &(q, c) in &flips {
                m[(i ^ (1 << q), i)] += c;
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let h: Self = serde_json::from_str(s)?;
        QubitLayout::new(h.layout.n_data, h.layout.n_aux)?;
        for t in &h.terms {
            t.validate(h.layout.n_qubits())?;
        }
        Ok(h)
    }
}

/// A Hermitian operator that can act on complex amplitude slices.
pub trait Operator: Sync {
    fn dim(&self) -> usize;
    /// Writes `H·x` into `y`.
    fn apply_into(&self, x: &[C64], y: &mut [C64]);
}

/// Precomputed diagonal plus single-bit flips of an [`IsingXZHamiltonian`].
#[derive(Debug, Clone)]
pub struct MatrixFreeOperator {
    diag: Vec<f64>,
    flips: Vec<(usize, f64)>,
}

impl MatrixFreeOperator {
    pub fn new(h: &IsingXZHamiltonian) -> Self {
        Self {
            diag: h.diagonal(),
            flips: h
                .flip_table()
                .into_iter()
                .map(|(q, c)| (1usize << q, c))
                .collect(),
        }
    }

    /// Operator from an explicit diagonal and `(qubit, coefficient)` flips.
    pub fn from_parts(diag: Vec<f64>, flips: &[(usize, f64)]) -> Result<Self> {
        let dim = diag.len();
        if !dim.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("dimension {dim} is not a power of two")));
        }
        let nq = dim.trailing_zeros() as usize;
        if let Some(&(q, _)) = flips.iter().find(|(q, _)| *q >= nq) {
            return Err(Error::IndexOutOfRange { index: q, dim: nq });
        }
        Ok(Self {
            diag,
            flips: flips.iter().map(|&(q, c)| (1usize << q, c)).collect(),
        })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `(bit mask, coefficient)` of every flip term.
    pub fn flips(&self) -> &[(usize, f64)] {
        &self.flips
    }

    fn row(&self, i: usize, x: &[C64]) -> C64 {
        let mut acc = x[i] * self.diag[i];
        for &(mask, c) in &self.flips {
            acc += x[i ^ mask] * c;
        }
        acc
    }
}

impl Operator for MatrixFreeOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        if y.len() >= PARALLEL_APPLY_DIM {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = self.row(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row(i, x);
            }
        }
    }
}

impl Operator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        let n = self.nrows();
        for (i, yi) in y.iter_mut().enumerate().take(n) {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                acc += x[j] * self[(i, j)];
            }
            *yi = acc;
        }
    }
}

/// Complex amplitudes over a computational basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            amps: vec![C64::new(0.0, 0.0); dim],
        }
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, dim });
        }
        let mut s = Self::zeros(dim);
        s.amps[index] = C64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amps.iter_mut().for_each(|a| *a /= n);
        }
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.amps[index].norm_sqr()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

pub(crate) fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn hamming_weight_and_distance() {
        let l = QubitLayout::new(4, 4).unwrap();
        let idx = l.compose(0b0110, 0b1011);
        assert_eq!(logical_hamming_weight(idx, &l).unwrap(), 2);
        assert_eq!(logical_hamming_weight(0, &l).unwrap(), 0);
        assert!(logical_hamming_weight(l.dim(), &l).is_err());

        let l2 = QubitLayout::gadget(2).unwrap();
        assert_eq!(logical_hamming_weight(l2.parse_label("11|00").unwrap(), &l2).unwrap(), 2);
        let r = l2.parse_label("10|10").unwrap();
        let s = l2.parse_label("01|10").unwrap();
        assert_eq!(logical_hamming_distance(r, s, &l2).unwrap(), 2);
        assert_eq!(logical_hamming_distance(r, r, &l2).unwrap(), 0);
        assert_eq!(
            logical_hamming_distance(l2.compose(0b00, 1), l2.compose(0b11, 2), &l2).unwrap(),
            2
        );
        assert!(logical_hamming_distance(0, 16, &l2).is_err());
    }

    #[test]
    fn distance_is_a_metric_on_data_bits() {
        let l = QubitLayout::new(3, 1).unwrap();
        let d = |a, b| logical_hamming_distance(a, b, &l).unwrap();
        for a in 0..l.dim() {
            for b in 0..l.dim() {
                assert_eq!(d(a, b), d(b, a));
                for c in 0..l.dim() {
                    assert!(d(a, c) <= d(a, b) + d(b, c));
                }
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        let l = QubitLayout::gadget(3).unwrap();
        for i in 0..l.dim() {
            assert_eq!(l.parse_label(&l.label(i)).unwrap(), i);
        }
        assert_eq!(l.label(l.compose(0b001, 0b011)), "100|110");
        assert!(l.parse_label("10|110").is_err());
    }

    #[test]
    fn apply_single_terms() {
        let l = QubitLayout::new(1, 0).unwrap();
        let zero = StateVector::basis(2, 0).unwrap();

        let h = IsingXZHamiltonian::from_terms(l, vec![PauliTerm::z(0, 2.0)]).unwrap();
        assert_eq!(h.apply(&zero).unwrap().amps, vec![c(2.0), c(0.0)]);

        let g = 0.3;
        let h = IsingXZHamiltonian::from_terms(l, vec![PauliTerm::x(0, -g)]).unwrap();
        assert_eq!(h.apply(&zero).unwrap().amps, vec![c(0.0), c(-g)]);

        let h = IsingXZHamiltonian::from_terms(l, vec![PauliTerm::z(0, 0.0), PauliTerm::x(0, 0.0)])
            .unwrap();
        assert!(h.apply(&zero).unwrap().amps.iter().all(|a| a.norm() == 0.0));

        let h = IsingXZHamiltonian::new(QubitLayout::new(2, 0).unwrap());
        assert!(matches!(h.apply(&zero), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn diagonal_energy_sign_convention() {
        let l = QubitLayout::new(2, 0).unwrap();
        let h = IsingXZHamiltonian::from_terms(l, vec![PauliTerm::zz(0, 1, 1.0)]).unwrap();
        assert_eq!(h.diagonal_energy(0b00).unwrap(), 1.0);
        assert_eq!(h.diagonal_energy(0b01).unwrap(), -1.0);
        assert_eq!(h.diagonal_energy(0b10).unwrap(), -1.0);
        assert_eq!(h.diagonal_energy(0b11).unwrap(), 1.0);
        assert!(h.diagonal_energy(4).is_err());
    }

    #[test]
    fn term_validation() {
        let l = QubitLayout::new(2, 0).unwrap();
        let mut h = IsingXZHamiltonian::new(l);
        assert!(h.push(PauliTerm::zz(1, 1, 1.0)).is_err());
        assert!(h.push(PauliTerm::z(2, 1.0)).is_err());
        assert!(h.push(PauliTerm::x(0, f64::NAN)).is_err());
        assert!(h
            .push(PauliTerm {
                axis: Axis::Z2,
                qubits: vec![0],
                coeff: 1.0
            })
            .is_err());
        assert!(QubitLayout::new(20, 20).is_err());
    }

    #[test]
    fn dense_views() {
        let l = QubitLayout::new(1, 0).unwrap();
        let h = IsingXZHamiltonian::new(l);
        assert!(h.build_dense().unwrap().iter().all(|&x| x == 0.0));

        let h = IsingXZHamiltonian::from_terms(l, vec![PauliTerm::x(0, -0.7)]).unwrap();
        let m = h.build_dense().unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, -0.7, -0.7, 0.0]));

        let big = IsingXZHamiltonian::new(QubitLayout::new(10, 10).unwrap());
        assert!(matches!(big.build_dense(), Err(Error::TooLarge { .. })));
    }

    fn random_hamiltonian(l: QubitLayout, rng: &mut ChaCha8Rng) -> IsingXZHamiltonian {
        let nq = l.n_qubits();
        let mut terms = Vec::new();
        for a in 0..nq {
            terms.push(PauliTerm::z(a, rng.random_range(-1.0..1.0)));
            terms.push(PauliTerm::x(a, rng.random_range(-1.0..1.0)));
            for b in a + 1..nq {
                terms.push(PauliTerm::zz(a, b, rng.random_range(-1.0..1.0)));
            }
        }
        IsingXZHamiltonian::from_terms(l, terms).unwrap()
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> StateVector {
        let mut s = StateVector::from_amplitudes(
            (0..dim)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        );
        s.normalize();
        s
    }

    #[test]
    fn dense_and_matrix_free_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = QubitLayout::gadget(3).unwrap();
        let h = random_hamiltonian(l, &mut rng);
        let m = h.build_dense().unwrap();
        // Hermiticity of the dense view.
        assert!((&m - m.transpose()).amax() < 1e-12);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let psi = random_state(l.dim(), &mut rng);
            let a = h.apply(&psi).unwrap();
            let mut b = vec![C64::new(0.0, 0.0); l.dim()];
            Operator::apply_into(&m, &psi.amps, &mut b);
            for (x, y) in a.amps.iter().zip(&b) {
                worst = worst.max((x - y).norm());
            }
        }
        assert!(worst < 1e-12, "max deviation {worst}");
    }

    #[test]
    fn x_terms_are_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = QubitLayout::gadget(2).unwrap();
        let h = random_hamiltonian(l, &mut rng);
        for i in 0..l.dim() {
            let out = h.apply(&StateVector::basis(l.dim(), i).unwrap()).unwrap();
            for (j, a) in out.amps.iter().enumerate() {
                if a.norm() > 0.0 {
                    assert!((i ^ j).count_ones() <= 1);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_filters() {
        let l = QubitLayout::gadget(1).unwrap();
        let mut h = IsingXZHamiltonian::new(l);
        h.push_group("z", vec![PauliTerm::z(0, 1.0), PauliTerm::zz(0, 1, 0.5)]).unwrap();
        h.push_group("x", vec![PauliTerm::x(1, -0.1)]).unwrap();
        let back = IsingXZHamiltonian::from_json(&h.to_json().unwrap()).unwrap();
        assert_eq!(back, h);
        assert_eq!(h.diagonal_part().terms.len(), 2);
        assert_eq!(h.off_diagonal_part().terms, vec![PauliTerm::x(1, -0.1)]);
        assert_eq!(h.group("x").unwrap().len(), 1);
        let bad = r#"{"layout":{"n_data":1,"n_aux":0},"terms":[{"axis":"Z2","qubits":[0,0],"coeff":1.0}]}"#;
        assert!(IsingXZHamiltonian::from_json(bad).is_err());
    }
}
