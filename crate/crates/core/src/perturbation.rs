//! Second-order effective Hamiltonian on the gadget manifold.
//!
//! With `H0` the diagonal part and `V` the transverse driver, the effective
//! matrix element between manifold states `r` and `s` is
//!
//! ```text
//! M_rs = E_r δ_rs + Σ_q V_rq V_qs · ½ [1/(E_r − E_q) + 1/(E_s − E_q)]
//! ```
//!
//! summed over non-manifold intermediates `q`. The symmetrized denominator
//! keeps `M` Hermitian when `E_r ≠ E_s`. Only single-flip states contribute
//! because `V` flips one qubit at a time.
//!
//! Closed-form amplitudes at `q0 = J/2` in the flat-manifold limit:
//! `hop = −4γ_dγ_a/(3J)` between configurations one data flip apart and
//! `same = −4γ_d²/(3J)` between equal-weight configurations two flips apart.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadget::{
    build_classical, build_classical_uncorrected, build_transverse, manifold_index, GadgetSpec,
};
use crate::spin_model::bit_string;

/// Largest `n` for which the dense numeric construction is attempted.
pub const MAX_NUMERIC_N: usize = 6;

/// Second-order diagonal shift `F[k]` of the manifold state whose first `k`
/// data qubits are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationTable {
    pub values: Vec<f64>,
}

/// Fluctuation shifts from `H_n + ηH_pot` (no correction applied).
///
/// Works for any supported `n`: the manifold state for each weight is taken
/// from the staircase rule and every single flip is checked to raise the
/// energy.
pub fn fluctuation_table(spec: &GadgetSpec) -> Result<FluctuationTable> {
    let h0 = build_classical_uncorrected(spec)?;
    let v = build_transverse(spec)?.flip_table();
    let n = spec.n;
    let l = spec.layout();
    let tol = 1e-12 * spec.j;
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let r = manifold_index(n, (1 << k) - 1);
        let e_r = h0.diagonal_energy(r)?;
        let mut f = 0.0;
        for &(bit, c) in &v {
            let q = r ^ (1 << bit);
            let den = e_r - h0.diagonal_energy(q)?;
            if den.abs() <= tol {
                return Err(Error::VanishingDenominator {
                    r: l.label(r),
                    q: l.label(q),
                });
            }
            f += c * c / den;
        }
        values.push(f);
    }
    Ok(FluctuationTable { values })
}

/// Matrix-element classes on the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseClass {
    Diagonal,
    /// One data flip apart.
    Hop,
    /// Same weight, two data flips apart.
    SameWeight,
    /// Two data flips apart with the weight changed by two.
    Zero,
    /// More than two data flips apart.
    Far,
}

pub fn classify(r: usize, s: usize) -> CaseClass {
    let d = (r ^ s).count_ones();
    match d {
        0 => CaseClass::Diagonal,
        1 => CaseClass::Hop,
        2 if r.count_ones() == s.count_ones() => CaseClass::SameWeight,
        2 => CaseClass::Zero,
        _ => CaseClass::Far,
    }
}

/// Effective Hamiltonian on the `2^n` manifold states, indexed by data
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonian {
    pub n: usize,
    pub hop_amp: f64,
    pub same_weight_amp: f64,
    /// Classical manifold energy `E_r` of each data configuration.
    pub classical: Vec<f64>,
    /// Full diagonal `M_rr` of each data configuration.
    pub diagonal: Vec<f64>,
    /// Second-order diagonal shift per weight.
    pub fluctuation: Vec<f64>,
    #[serde(skip)]
    pub dense: Option<DMatrix<f64>>,
}

impl EffectiveHamiltonian {
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// Mean diagonal element per weight class.
    pub fn diagonal_by_weight(&self) -> Vec<f64> {
        mean_by_weight(self.n, &self.diagonal)
    }

    pub fn classical_by_weight(&self) -> Vec<f64> {
        mean_by_weight(self.n, &self.classical)
    }

    /// Dense matrix: the stored one, or one built from the class amplitudes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let Some(m) = &self.dense {
            return m.clone();
        }
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |r, s| match classify(r, s) {
            CaseClass::Diagonal => self.diagonal[r],
            CaseClass::Hop => self.hop_amp,
            CaseClass::SameWeight => self.same_weight_amp,
            CaseClass::Zero | CaseClass::Far => 0.0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes the dense matrix as one JSON header line followed by
    /// row-major little-endian `f64` values.
    pub fn write_dense<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.to_dense();
        let header = serde_json::json!({
            "rows": m.nrows(),
            "cols": m.ncols(),
            "dtype": "f64le",
            "order": "row-major",
            "n": self.n,
        });
        writeln!(w, "{header}")?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&m[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads a matrix written by [`EffectiveHamiltonian::write_dense`].
pub fn read_dense(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidArgument("missing header line".into()))?;
    let header: serde_json::Value = serde_json::from_slice(&bytes[..nl])?;
    let dim = |key: &str| {
        header[key]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("header lacks {key}")))
    };
    let (rows, cols) = (dim("rows")?, dim("cols")?);
    let body = &bytes[nl + 1..];
    if body.len() != rows * cols * 8 {
        return Err(Error::LengthMismatch {
            expected: rows * cols * 8,
            got: body.len(),
        });
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

fn mean_by_weight(n: usize, per_config: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; n + 1];
    let mut count = vec![0usize; n + 1];
    for (d, v) in per_config.iter().enumerate() {
        let w = d.count_ones() as usize;
        sum[w] += v;
        count[w] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

fn class_mean(m: &DMatrix<f64>, class: CaseClass) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..m.nrows() {
        for s in 0..m.ncols() {
            if classify(r, s) == class {
                sum += m[(r, s)];
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Numeric second-order effective Hamiltonian of the assembled spec.
pub fn second_order_numeric(spec: &GadgetSpec) -> Result<EffectiveHamiltonian> {
    spec.validate()?;
    let n = spec.n;
    if n > MAX_NUMERIC_N {
        return Err(Error::TooLarge {
            dim: n,
            limit: MAX_NUMERIC_N,
        });
    }
    let l = spec.layout();
    let diag = build_classical(spec)?.diagonal();
    let manifold = crate::gadget::enumerate_manifold_of(spec, &diag)?;
    let flips = build_transverse(spec)?.flip_table();
    let dim = 1usize << n;
    let tol = 1e-12 * spec.j;

    // Manifold position of every basis index, if any.
    let mut position = vec![usize::MAX; l.dim()];
    for e in &manifold.entries {
        position[e.basis_index] = e.data;
    }

    let mut m = DMatrix::zeros(dim, dim);
    for e in &manifold.entries {
        let r = e.basis_index;
        m[(e.data, e.data)] += diag[r];
        for &(b1, v1) in &flips {
            let q = r ^ (1 << b1);
            if position[q] != usize::MAX {
                continue;
            }
            let den_r = diag[r] - diag[q];
            if den_r.abs() <= tol {
                return Err(Error::VanishingDenominator {
                    r: l.label(r),
                    q: l.label(q),
                });
            }
            for &(b2, v2) in &flips {
                let s = q ^ (1 << b2);
                let ps = position[s];
                if ps == usize::MAX {
                    continue;
                }
                let den_s = diag[s] - diag[q];
                if den_s.abs() <= tol {
                    return Err(Error::VanishingDenominator {
                        r: l.label(s),
                        q: l.label(q),
                    });
                }
                m[(e.data, ps)] += v1 * v2 * 0.5 * (1.0 / den_r + 1.0 / den_s);
            }
        }
    }

    let classical: Vec<f64> = manifold.entries.iter().map(|e| e.energy).collect();
    let diagonal: Vec<f64> = (0..dim).map(|d| m[(d, d)]).collect();
    let shifts: Vec<f64> = diagonal.iter().zip(&classical).map(|(a, b)| a - b).collect();
    Ok(EffectiveHamiltonian {
        n,
        hop_amp: class_mean(&m, CaseClass::Hop),
        same_weight_amp: class_mean(&m, CaseClass::SameWeight),
        classical,
        diagonal,
        fluctuation: mean_by_weight(n, &shifts),
        dense: Some(m),
    })
}

pub fn closed_form_hop(spec: &GadgetSpec) -> f64 {
    -4.0 * spec.gamma_d * spec.gamma_a / (3.0 * spec.j)
}

pub fn closed_form_same_weight(spec: &GadgetSpec) -> f64 {
    -4.0 * spec.gamma_d * spec.gamma_d / (3.0 * spec.j)
}

/// Effective Hamiltonian from the closed-form amplitudes and a fluctuation
/// table. Classical energies come from the staircase rule, so no `4^n` scan
/// is needed.
pub fn closed_form_effective(spec: &GadgetSpec, f: &FluctuationTable) -> Result<EffectiveHamiltonian> {
    spec.validate()?;
    let n = spec.n;
    if f.values.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            got: f.values.len(),
        });
    }
    let classical_h = build_classical(spec)?;
    let classical = (0..1usize << n)
        .map(|d| classical_h.diagonal_energy(manifold_index(n, d)))
        .collect::<Result<Vec<f64>>>()?;
    let diagonal = classical
        .iter()
        .enumerate()
        .map(|(d, e)| e + f.values[d.count_ones() as usize])
        .collect();
    Ok(EffectiveHamiltonian {
        n,
        hop_amp: closed_form_hop(spec),
        same_weight_amp: closed_form_same_weight(spec),
        classical,
        diagonal,
        fluctuation: f.values.clone(),
        dense: None,
    })
}

/// Largest absolute deviation per case class between two effective
/// Hamiltonians on the same `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub diagonal: f64,
    pub hop: f64,
    pub same_weight: f64,
    /// Largest magnitude of `a` on the class that should vanish.
    pub zero: f64,
    pub far: f64,
}

pub fn compare_effective(a: &EffectiveHamiltonian, b: &EffectiveHamiltonian) -> Result<DeviationReport> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let ma = a.to_dense();
    let mb = b.to_dense();
    let mut rep = DeviationReport {
        diagonal: 0.0,
        hop: 0.0,
        same_weight: 0.0,
        zero: 0.0,
        far: 0.0,
    };
    for r in 0..a.dim() {
        for s in 0..a.dim() {
            let d = (ma[(r, s)] - mb[(r, s)]).abs();
            let slot = match classify(r, s) {
                CaseClass::Diagonal => &mut rep.diagonal,
                CaseClass::Hop => &mut rep.hop,
                CaseClass::SameWeight => &mut rep.same_weight,
                CaseClass::Zero => &mut rep.zero,
                CaseClass::Far => &mut rep.far,
            };
            *slot = slot.max(d);
        }
    }
    Ok(rep)
}

/// Spread of the numeric diagonal after removing the applied bias, and,
/// in equal-gamma mode, the Johnson shift the correction pre-compensates.
///
/// Zero means the corrected diagonal is flat up to the logical potential.
pub fn corrected_flatness(spec: &GadgetSpec) -> Result<f64> {
    let eff = second_order_numeric(spec)?;
    let n = spec.n;
    let fields_spec = GadgetSpec {
        gamma_d: 0.0,
        gamma_a: 0.0,
        correction_mode: crate::gadget::CorrectionMode::None,
        ..spec.clone()
    };
    // Energies of H_n + ηH_pot alone: the bias profile to subtract.
    let bare = build_classical_uncorrected(&fields_spec)?;
    let johnson = match spec.correction_mode {
        crate::gadget::CorrectionMode::EqualGamma => 4.0 * spec.gamma_d.powi(2) / (3.0 * spec.j),
        _ => 0.0,
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in 0..1usize << n {
        let w = d.count_ones() as usize;
        let v = eff.diagonal[d] - bare.diagonal_energy(manifold_index(n, d))?
            - johnson * (w * (n - w)) as f64;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

/// Hop-entry deviation between numeric and closed form at two bias scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScaling {
    pub eta_a: f64,
    pub eta_b: f64,
    pub deviation_a: f64,
    pub deviation_b: f64,
}

impl EtaScaling {
    /// Exponent `p` in `deviation ∝ η^p`.
    pub fn exponent(&self) -> f64 {
        (self.deviation_b / self.deviation_a).ln() / (self.eta_b / self.eta_a).ln()
    }
}

pub fn eta_scaling(spec: &GadgetSpec, eta_a: f64, eta_b: f64) -> Result<EtaScaling> {
    let dev = |eta: f64| -> Result<f64> {
        let s = GadgetSpec { eta, ..spec.clone() };
        let numeric = second_order_numeric(&s)?;
        let closed = closed_form_effective(&s, &fluctuation_table(&s)?)?;
        Ok(compare_effective(&numeric, &closed)?.hop)
    };
    Ok(EtaScaling {
        eta_a,
        eta_b,
        deviation_a: dev(eta_a)?,
        deviation_b: dev(eta_b)?,
    })
}

/// Row labels of an effective matrix (data configurations).
pub fn config_labels(n: usize) -> Vec<String> {
    (0..1usize << n).map(|d| bit_string(d, n)).collect()
}
