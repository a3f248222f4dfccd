//! Gadget Hamiltonian builders and the low-energy manifold.
//!
//! The diagonal gadget on `n` data and `n` auxiliary qubits is
//!
//! ```text
//! H_n = J Σ_{i<j} Z_i Z_j + h Σ_i Z_i + J Σ_{i,j} Z_i Z_{j,a} + Σ_j h_{j,a} Z_{j,a}
//! h = −J + q0,   h_{j,a} = −J(2j − n) + q0   (j = 1..n)
//! ```
//!
//! For every data configuration of weight `w` exactly one auxiliary pattern
//! minimizes the energy: auxiliaries `1..n−w` set, the rest clear (a
//! "staircase" with `m = n − w` ones). All `2^n` such states share the energy
//! `−J n(n+1)/2`, independent of `q0` inside its allowed range.
//!
//! Biases live on the auxiliaries. A field `−b` on auxiliary `k` together with
//! `+b` on auxiliary `k+1` raises the manifold states with exactly `k`
//! auxiliary ones by `2b` and leaves the others alone. The sector index `k`
//! therefore addresses the weight class `w = n − k`; the two boundary sectors
//! `k = 0` and `k = n` use a single field and additionally shift the whole
//! manifold by the constant `−b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::{fluctuation_table, FluctuationTable};
use crate::spin_model::{bit_string, IsingXZHamiltonian, PauliTerm, QubitLayout};

/// Largest `n` for which the manifold is found by exhaustive scan.
pub const MAX_ENUMERATION_N: usize = 8;

/// Largest `n` accepted by the builders (`2n` qubits must fit a register).
pub const MAX_GADGET_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// No fluctuation correction.
    #[default]
    None,
    /// Cancel the fluctuation shifts only; appropriate when `γ_d ≪ γ_a`.
    Suppressed,
    /// Also cancel the Johnson-graph shift the same-weight hopping puts on
    /// Dicke states; appropriate when `γ_d ≈ γ_a`.
    EqualGamma,
}

/// Full parameterization of one gadget instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GadgetSpec {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub q0: f64,
    /// Scale of the logical potential; the auxiliary bias fields are
    /// `eta · bias_to_aux_fields(bias)`.
    pub eta: f64,
    pub gamma_d: f64,
    pub gamma_a: f64,
    /// Sector-indexed bias pattern `b[0..=n]`.
    pub bias: Vec<f64>,
    #[serde(default)]
    pub correction_mode: CorrectionMode,
}

impl GadgetSpec {
    /// Bare gadget with `q0 = J/2` and no bias, driver or correction.
    pub fn new(n: usize, j: f64) -> Self {
        Self {
            n,
            j,
            q0: j / 2.0,
            eta: 0.0,
            gamma_d: 0.0,
            gamma_a: 0.0,
            bias: vec![0.0; n + 1],
            correction_mode: CorrectionMode::None,
        }
    }

    pub fn with_q0(mut self, q0: f64) -> Self {
        self.q0 = q0;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_gammas(mut self, gamma_d: f64, gamma_a: f64) -> Self {
        self.gamma_d = gamma_d;
        self.gamma_a = gamma_a;
        self
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_correction(mut self, mode: CorrectionMode) -> Self {
        self.correction_mode = mode;
        self
    }

    pub fn layout(&self) -> QubitLayout {
        QubitLayout {
            n_data: self.n,
            n_aux: self.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n == 0 || self.n > MAX_GADGET_N {
            return bad(format!("n = {} outside 1..={MAX_GADGET_N}", self.n));
        }
        if !(self.j.is_finite() && self.j > 0.0) {
            return bad(format!("J must be positive, got {}", self.j));
        }
        if !self.q0.is_finite() || !self.eta.is_finite() {
            return bad("q0 and eta must be finite".into());
        }
        for (name, g) in [("gamma_d", self.gamma_d), ("gamma_a", self.gamma_a)] {
            if !(g.is_finite() && g >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {g}"));
            }
        }
        if self.bias.len() != self.n + 1 {
            return Err(Error::LengthMismatch {
                expected: self.n + 1,
                got: self.bias.len(),
            });
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return bad("bias entries must be finite".into());
        }
        Ok(())
    }
}

/// Auxiliary fields `h_{i,a} = −J(2i − n) + q0` for `i = 1..n`.
pub fn aux_fields(spec: &GadgetSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.n as f64;
    Ok((1..=spec.n)
        .map(|i| -spec.j * (2.0 * i as f64 - n) + spec.q0)
        .collect())
}

/// The diagonal gadget `H_n` (couplings and fields, no bias or driver).
pub fn build_gadget(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    let h_aux = aux_fields(spec)?;
    let l = spec.layout();
    let n = spec.n;
    let h_data = -spec.j + spec.q0;

    let mut h = IsingXZHamiltonian::new(l);
    let mut dd = Vec::new();
    for i in 0..n {
        for k in i + 1..n {
            dd.push(PauliTerm::zz(l.data_site(i), l.data_site(k), spec.j));
        }
    }
    h.push_group("gadget.data_coupling", dd)?;
    h.push_group(
        "gadget.data_field",
        (0..n).map(|i| PauliTerm::z(l.data_site(i), h_data)).collect(),
    )?;
    let mut da = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            da.push(PauliTerm::zz(l.data_site(i), l.aux_site(k), spec.j));
        }
    }
    h.push_group("gadget.data_aux_coupling", da)?;
    h.push_group(
        "gadget.aux_field",
        h_aux
            .iter()
            .enumerate()
            .map(|(k, &f)| PauliTerm::z(l.aux_site(k), f))
            .collect(),
    )?;
    Ok(h)
}

/// Auxiliary field coefficients realizing a sector bias table `b[0..=n]`.
///
/// `b[k]` contributes `−b[k]` to auxiliary `k` and `+b[k]` to auxiliary
/// `k+1` (1-based), dropping whichever of the two does not exist.
pub fn bias_to_aux_fields(b: &[f64], n: usize) -> Result<Vec<f64>> {
    if b.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            got: b.len(),
        });
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("bias entries must be finite".into()));
    }
    let mut z = vec![0.0; n];
    for (k, &bk) in b.iter().enumerate() {
        if k >= 1 {
            z[k - 1] -= bk;
        }
        if k < n {
            z[k] += bk;
        }
    }
    Ok(z)
}

/// Sector whose bias addresses the logical weight class `w`.
pub fn sector_for_weight(n: usize, w: usize) -> usize {
    debug_assert!(w <= n);
    n - w
}

/// Staircase auxiliary pattern with `m` ones (auxiliaries `1..=m` set).
pub fn staircase(m: usize) -> usize {
    (1 << m) - 1
}

/// Basis index of the manifold state for a data configuration, by the
/// staircase rule.
pub fn manifold_index(n: usize, data: usize) -> usize {
    let w = data.count_ones() as usize;
    data | (staircase(n - w) << n)
}

/// The `ηH_pot` fields (zero coefficients omitted).
pub fn build_potential(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    spec.validate()?;
    let fields = bias_to_aux_fields(&spec.bias, spec.n)?;
    let l = spec.layout();
    let mut h = IsingXZHamiltonian::new(l);
    h.push_group(
        "potential",
        fields
            .iter()
            .enumerate()
            .filter(|(_, &z)| spec.eta * z != 0.0)
            .map(|(k, &z)| PauliTerm::z(l.aux_site(k), spec.eta * z))
            .collect(),
    )?;
    Ok(h)
}

/// `−γ_d ΣX_i − γ_a ΣX_{i,a}`; zero strengths produce no terms.
pub fn build_transverse(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    spec.validate()?;
    let l = spec.layout();
    let mut h = IsingXZHamiltonian::new(l);
    if spec.gamma_d != 0.0 {
        h.push_group(
            "transverse.data",
            (0..spec.n).map(|i| PauliTerm::x(l.data_site(i), -spec.gamma_d)).collect(),
        )?;
    }
    if spec.gamma_a != 0.0 {
        h.push_group(
            "transverse.aux",
            (0..spec.n).map(|i| PauliTerm::x(l.aux_site(i), -spec.gamma_a)).collect(),
        )?;
    }
    Ok(h)
}

/// `H_n + ηH_pot`, the classical part before any fluctuation correction.
pub fn build_classical_uncorrected(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    let mut h = build_gadget(spec)?;
    h.extend(build_potential(spec)?)?;
    Ok(h)
}

/// Per-weight energy shift the correction should apply, before conversion
/// to auxiliary fields.
pub fn correction_targets(spec: &GadgetSpec, f: &FluctuationTable) -> Result<Vec<f64>> {
    spec.validate()?;
    if f.values.len() != spec.n + 1 {
        return Err(Error::LengthMismatch {
            expected: spec.n + 1,
            got: f.values.len(),
        });
    }
    let n = spec.n;
    let johnson = 4.0 * spec.gamma_d * spec.gamma_d / (3.0 * spec.j);
    Ok((0..=n)
        .map(|w| match spec.correction_mode {
            CorrectionMode::None => 0.0,
            CorrectionMode::Suppressed => -f.values[w],
            // Same-weight hopping lowers |D_{n,w}⟩ by johnson·w(n−w); undo it.
            CorrectionMode::EqualGamma => -f.values[w] + johnson * (w * (n - w)) as f64,
        })
        .collect())
}

/// Auxiliary fields cancelling the second-order fluctuation shifts.
///
/// A target shift `s(w)` on weight class `w` is a bias of `s(w)/2` on sector
/// `n − w`. Returns an empty Hamiltonian in [`CorrectionMode::None`].
pub fn build_correction(spec: &GadgetSpec, f: &FluctuationTable) -> Result<IsingXZHamiltonian> {
    let targets = correction_targets(spec, f)?;
    let n = spec.n;
    let l = spec.layout();
    let mut h = IsingXZHamiltonian::new(l);
    if spec.correction_mode == CorrectionMode::None {
        return Ok(h);
    }
    let mut b = vec![0.0; n + 1];
    for (w, s) in targets.iter().enumerate() {
        b[sector_for_weight(n, w)] = 0.5 * s;
    }
    let z = bias_to_aux_fields(&b, n)?;
    h.push_group(
        "correction",
        z.iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, &c)| PauliTerm::z(l.aux_site(k), c))
            .collect(),
    )?;
    Ok(h)
}

/// The diagonal part of the assembled Hamiltonian: `H_n + H_corr + ηH_pot`.
pub fn build_classical(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    let mut h = build_classical_uncorrected(spec)?;
    if spec.correction_mode != CorrectionMode::None {
        let f = fluctuation_table(spec)?;
        h.extend(build_correction(spec, &f)?)?;
    }
    Ok(h)
}

/// `H_sym = H_n + H_trans + H_corr + ηH_pot`.
pub fn assemble_total(spec: &GadgetSpec) -> Result<IsingXZHamiltonian> {
    let mut h = build_gadget(spec)?;
    h.extend(build_transverse(spec)?)?;
    if spec.correction_mode != CorrectionMode::None {
        let f = fluctuation_table(spec)?;
        h.extend(build_correction(spec, &f)?)?;
    }
    h.extend(build_potential(spec)?)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEntry {
    pub data_config: String,
    pub aux_config: String,
    pub label: String,
    pub data: usize,
    pub aux: usize,
    pub basis_index: usize,
    pub weight: usize,
    pub aux_ones: usize,
    pub energy: f64,
}

/// The `2^n` lowest classical states, one per data configuration, sorted by
/// data configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub n: usize,
    pub entries: Vec<ManifoldEntry>,
    /// `max − min` of the manifold energies.
    pub spread: f64,
    /// Smallest margin between a minimizer and the runner-up auxiliary
    /// pattern over all data configurations.
    pub min_margin: f64,
}

impl Manifold {
    pub fn contains(&self, basis_index: usize) -> bool {
        let data = basis_index & ((1 << self.n) - 1);
        self.entries[data].basis_index == basis_index
    }

    pub fn entry_for_data(&self, data: usize) -> &ManifoldEntry {
        &self.entries[data]
    }

    pub fn min_energy(&self) -> f64 {
        self.entries.iter().map(|e| e.energy).fold(f64::INFINITY, f64::min)
    }

    pub fn max_energy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.energy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Human-readable table, one row per manifold state.
    pub fn table(&self) -> String {
        let mut s = format!("{:<w$}  {:>6}  {:>4}  {:>20}\n", "state", "weight", "m", "energy", w = 2 * self.n + 1);
        for e in &self.entries {
            s.push_str(&format!(
                "{:<w$}  {:>6}  {:>4}  {:>20.12}\n",
                e.label,
                e.weight,
                e.aux_ones,
                e.energy,
                w = 2 * self.n + 1
            ));
        }
        s
    }
}

/// Finds the low-energy manifold by scanning all `4^n` classical energies of
/// the assembled diagonal part.
pub fn enumerate_manifold(spec: &GadgetSpec) -> Result<Manifold> {
    spec.validate()?;
    if spec.n > MAX_ENUMERATION_N {
        return Err(Error::TooLarge {
            dim: spec.n,
            limit: MAX_ENUMERATION_N,
        });
    }
    let classical = build_classical(spec)?;
    enumerate_manifold_of(spec, &classical.diagonal())
}

/// Manifold of a precomputed diagonal over the gadget layout.
pub(crate) fn enumerate_manifold_of(spec: &GadgetSpec, diag: &[f64]) -> Result<Manifold> {
    let n = spec.n;
    let l = spec.layout();
    let tol = 1e-9 * spec.j;
    let scanned: Vec<(usize, f64, f64)> = (0..1usize << n)
        .into_par_iter()
        .map(|d| {
            let mut best = (usize::MAX, f64::INFINITY);
            let mut second = f64::INFINITY;
            for a in 0..1usize << n {
                let e = diag[l.compose(d, a)];
                if e < best.1 {
                    second = best.1;
                    best = (a, e);
                } else if e < second {
                    second = e;
                }
            }
            (best.0, best.1, second - best.1)
        })
        .collect();

    let mut entries = Vec::with_capacity(scanned.len());
    let mut min_margin = f64::INFINITY;
    for (d, (a, e, margin)) in scanned.into_iter().enumerate() {
        if margin <= tol {
            return Err(Error::NonUniqueMinimizer {
                data: bit_string(d, n),
                gap: margin,
            });
        }
        min_margin = min_margin.min(margin);
        let w = d.count_ones() as usize;
        let m = a.count_ones() as usize;
        if a != staircase(m) || m != n - w {
            return Err(Error::StaircaseViolation {
                data: bit_string(d, n),
                aux: bit_string(a, n),
                expected: n - w,
            });
        }
        let idx = l.compose(d, a);
        entries.push(ManifoldEntry {
            data_config: bit_string(d, n),
            aux_config: bit_string(a, n),
            label: l.label(idx),
            data: d,
            aux: a,
            basis_index: idx,
            weight: w,
            aux_ones: m,
            energy: e,
        });
    }
    let lo = entries.iter().map(|e| e.energy).fold(f64::INFINITY, f64::min);
    let hi = entries.iter().map(|e| e.energy).fold(f64::NEG_INFINITY, f64::max);
    Ok(Manifold {
        n,
        entries,
        spread: hi - lo,
        min_margin,
    })
}

/// Lowest non-manifold energy minus the highest manifold energy.
pub fn excitation_gap(spec: &GadgetSpec) -> Result<f64> {
    let classical = build_classical(spec)?;
    let diag = classical.diagonal();
    let manifold = enumerate_manifold_of(spec, &diag)?;
    let lowest_excited = diag
        .iter()
        .enumerate()
        .filter(|(i, _)| !manifold.contains(*i))
        .map(|(_, &e)| e)
        .fold(f64::INFINITY, f64::min);
    Ok(lowest_excited - manifold.max_energy())
}

/// One ordered pair of adjacent manifold states and its two intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub from: String,
    pub to: String,
    pub data_first: String,
    pub aux_first: String,
    /// `E_q − E_r` for the data-first intermediate.
    pub data_first_excitation: f64,
    /// `E_q − E_r` for the auxiliary-first intermediate.
    pub aux_first_excitation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub pairs_checked: usize,
    pub tolerance: f64,
    pub records: Vec<FlipRecord>,
    pub violations: Vec<String>,
}

impl FlipReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every weight-changing manifold transition is one data flip
/// plus one auxiliary flip, with one intermediate at `J` and one at `3J`.
pub fn verify_single_flip_structure(spec: &GadgetSpec) -> Result<FlipReport> {
    let classical = build_classical(spec)?;
    let diag = classical.diagonal();
    let manifold = enumerate_manifold_of(spec, &diag)?;
    let n = spec.n;
    let l = spec.layout();
    let j = spec.j;
    let tolerance = 1e-9 * j
        + 5.0 * spec.eta.abs() * j
        + 10.0 * (spec.gamma_d.powi(2) + spec.gamma_a.powi(2)) / j;

    let mut records = Vec::new();
    let mut violations = Vec::new();
    for r in &manifold.entries {
        for bit in 0..n {
            let s = manifold.entry_for_data(r.data ^ (1 << bit));
            let aux_diff = r.aux ^ s.aux;
            if aux_diff.count_ones() != 1 {
                violations.push(format!(
                    "{} -> {}: auxiliary registers differ in {} positions",
                    r.label,
                    s.label,
                    aux_diff.count_ones()
                ));
                continue;
            }
            let aux_bit = aux_diff.trailing_zeros() as usize;
            let q_data = r.basis_index ^ (1 << l.data_site(bit));
            let q_aux = r.basis_index ^ (1 << l.aux_site(aux_bit));
            if manifold.contains(q_data) || manifold.contains(q_aux) {
                violations.push(format!("{} -> {}: intermediate lies in the manifold", r.label, s.label));
                continue;
            }
            let e_data = diag[q_data] - diag[r.basis_index];
            let e_aux = diag[q_aux] - diag[r.basis_index];
            let (lo, hi) = if e_data <= e_aux { (e_data, e_aux) } else { (e_aux, e_data) };
            if (lo - j).abs() > tolerance || (hi - 3.0 * j).abs() > tolerance {
                violations.push(format!(
                    "{} -> {}: excitations {lo:.12} and {hi:.12}, expected J and 3J",
                    r.label, s.label
                ));
            }
            records.push(FlipRecord {
                from: r.label.clone(),
                to: s.label.clone(),
                data_first: l.label(q_data),
                aux_first: l.label(q_aux),
                data_first_excitation: e_data,
                aux_first_excitation: e_aux,
            });
        }
    }
    Ok(FlipReport {
        pairs_checked: records.len(),
        tolerance,
        records,
        violations,
    })
}

/// Empirically determined effect of a unit bias on one sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorShift {
    pub sector: usize,
    /// Logical weight class that moved relative to the rest.
    pub weight: usize,
    /// Relative energy shift of that class per unit bias.
    pub shift: f64,
    /// Shift common to every manifold state, per unit bias.
    pub global: f64,
}

/// Applies a small unit bias to each sector in turn and reads off which
/// weight class moves and by how much.
pub fn bias_sector_map(n: usize) -> Result<Vec<SectorShift>> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the sector map needs n ≥ 2 to separate a class shift from a global one".into(),
        ));
    }
    let probe = 1e-3;
    let base = enumerate_manifold(&GadgetSpec::new(n, 1.0))?;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut b = vec![0.0; n + 1];
        b[k] = 1.0;
        let spec = GadgetSpec::new(n, 1.0).with_eta(probe).with_bias(b);
        let biased = enumerate_manifold(&spec)?;
        let mut per_weight = vec![Vec::new(); n + 1];
        for (e0, e1) in base.entries.iter().zip(&biased.entries) {
            per_weight[e0.weight].push((e1.energy - e0.energy) / probe);
        }
        let class: Vec<f64> = per_weight.iter().map(|v| v[0]).collect();
        // The baseline is the value shared by at least two classes.
        let baseline = class
            .iter()
            .copied()
            .find(|&x| class.iter().filter(|&&y| (x - y).abs() < 1e-6).count() >= 2)
            .ok_or_else(|| Error::InvalidArgument(format!("sector {k}: no common baseline")))?;
        let moved: Vec<usize> = (0..=n).filter(|&w| (class[w] - baseline).abs() > 1e-6).collect();
        if moved.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "sector {k}: expected exactly one shifted class, found {moved:?}"
            )));
        }
        out.push(SectorShift {
            sector: k,
            weight: moved[0],
            shift: class[moved[0]] - baseline,
            global: baseline,
        });
    }
    Ok(out)
}
