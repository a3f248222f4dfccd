//! Dicke-basis (Hamming-weight sector) representation.
//!
//! `|D_{n,k}⟩` is the uniform superposition of the `C(n,k)` weight-`k`
//! strings. On these states `−γΣX_i` acts as the tridiagonal matrix with
//! off-diagonal `−γ√((k+1)(n−k))`, and a potential `f(|j|)` is diagonal.

use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::EffectiveHamiltonian;
use crate::propagate::{check_times, krylov_evolve, DenseSpectral, GapInfo, KrylovOptions};
use crate::spin_model::{norm, Operator, StateVector, C64};

/// Sector operators above this dimension propagate with Krylov steps.
pub const DENSE_SECTOR_DIM: usize = 256;

/// Largest `n` for which Dicke states are expanded over basis strings.
pub const MAX_EXPLICIT_N: usize = 20;

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        0.0
    } else {
        ln_binomial(n, k).exp().round()
    }
}

/// `√(C(n,k)/2^n)`, the Dicke amplitudes of the uniform superposition.
pub fn uniform_sector_amplitudes(n: usize) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    (0..=n)
        .map(|k| (0.5 * (ln_binomial(n, k) - n as f64 * ln2)).exp())
        .collect()
}

/// Basis strings of `|D_{n,k}⟩` with their common amplitude `1/√C(n,k)`.
pub fn dicke_amplitudes(n: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if n > MAX_EXPLICIT_N {
        return Err(Error::TooLarge {
            dim: n,
            limit: MAX_EXPLICIT_N,
        });
    }
    if k > n {
        return Err(Error::IndexOutOfRange { index: k, dim: n + 1 });
    }
    let amp = 1.0 / binomial(n, k).sqrt();
    Ok((0..1usize << n)
        .filter(|x| x.count_ones() as usize == k)
        .map(|x| (x, amp))
        .collect())
}

/// Amplitudes over `|D_{n,0}⟩ … |D_{n,n}⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricState {
    pub n: usize,
    pub amps: Vec<C64>,
}

impl SymmetricState {
    /// Normalized state; rejects norms off by more than `1e−10`.
    pub fn new(n: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != n + 1 {
            return Err(Error::LengthMismatch {
                expected: n + 1,
                got: amps.len(),
            });
        }
        let nrm = norm(&amps);
        if (nrm * nrm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("state norm² {} is not 1", nrm * nrm)));
        }
        Ok(Self { n, amps })
    }

    pub fn sector(n: usize, k: usize) -> Result<Self> {
        if k > n {
            return Err(Error::IndexOutOfRange { index: k, dim: n + 1 });
        }
        let mut amps = vec![C64::new(0.0, 0.0); n + 1];
        amps[k] = C64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Symmetric image of the uniform superposition over all `2^n` strings.
    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            amps: uniform_sector_amplitudes(n)
                .into_iter()
                .map(|a| C64::new(a, 0.0))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.amps[k].norm_sqr()
    }

    /// Expansion over the `2^n` basis strings.
    pub fn to_full(&self) -> Result<StateVector> {
        if self.n > MAX_EXPLICIT_N {
            return Err(Error::TooLarge {
                dim: self.n,
                limit: MAX_EXPLICIT_N,
            });
        }
        let inv: Vec<f64> = (0..=self.n).map(|k| 1.0 / binomial(self.n, k).sqrt()).collect();
        Ok(StateVector::from_amplitudes(
            (0..1usize << self.n)
                .map(|x| self.amps[x.count_ones() as usize] * inv[x.count_ones() as usize])
                .collect(),
        ))
    }
}

/// `c[k] = ⟨D_{n,k}|ψ⟩` and `leakage = 1 − Σ|c[k]|²`.
pub fn project_symmetric(psi: &StateVector, n: usize) -> Result<(SymmetricState, f64)> {
    if n > MAX_EXPLICIT_N || psi.dim() != 1 << n {
        return Err(Error::DimensionMismatch {
            expected: 1 << n.min(MAX_EXPLICIT_N),
            got: psi.dim(),
        });
    }
    let mut c = vec![C64::new(0.0, 0.0); n + 1];
    for (x, a) in psi.amps.iter().enumerate() {
        c[x.count_ones() as usize] += a;
    }
    for (k, ck) in c.iter_mut().enumerate() {
        *ck /= binomial(n, k).sqrt();
    }
    let kept: f64 = c.iter().map(|a| a.norm_sqr()).sum();
    let total = psi.norm().powi(2);
    Ok((SymmetricState { n, amps: c }, total - kept))
}

/// Real symmetric tridiagonal operator on the `n + 1` Dicke sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricOperator {
    pub n: usize,
    pub diag: Vec<f64>,
    /// `hop[k]` couples sectors `k` and `k + 1`.
    pub hop: Vec<f64>,
}

impl SymmetricOperator {
    pub fn new(n: usize, diag: Vec<f64>, hop: Vec<f64>) -> Result<Self> {
        if diag.len() != n + 1 {
            return Err(Error::LengthMismatch {
                expected: n + 1,
                got: diag.len(),
            });
        }
        if hop.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: hop.len(),
            });
        }
        Ok(Self { n, diag, hop })
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d {
            m[(k, k)] = self.diag[k];
        }
        for (k, &h) in self.hop.iter().enumerate() {
            m[(k, k + 1)] = h;
            m[(k + 1, k)] = h;
        }
        m
    }

    pub fn spectral(&self) -> Result<DenseSpectral> {
        DenseSpectral::new(&self.to_dense())
    }

    /// Ground energy and gap from the three lowest eigenvalues, found by
    /// Sturm-sequence bisection in `O(n)` per probe.
    pub fn gap(&self) -> Result<GapInfo> {
        let evals: Vec<f64> = (0..self.dim().min(3)).map(|k| self.eigenvalue(k)).collect();
        if evals.iter().any(|e| !e.is_finite()) {
            return Err(Error::Eigensolver("non-finite sector operator".into()));
        }
        Ok(GapInfo::from_sorted(&evals))
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for k in 0..self.dim() {
            let coupling = if k == 0 { 0.0 } else { self.hop[k - 1] * self.hop[k - 1] };
            q = self.diag[k] - x - if k == 0 { 0.0 } else { coupling / q };
            if q == 0.0 {
                q = -f64::EPSILON * (x.abs() + coupling.sqrt()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim() {
            let r = if i > 0 { self.hop[i - 1].abs() } else { 0.0 } + self.hop.get(i).map_or(0.0, |h| h.abs());
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn apply(&self, c: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply_into(c, &mut out);
        out
    }

    pub fn evolve(&self, psi0: &SymmetricState, times: &[f64]) -> Result<Vec<SymmetricState>> {
        if psi0.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi0.amps.len(),
            });
        }
        check_times(times)?;
        if self.dim() > DENSE_SECTOR_DIM {
            return Ok(krylov_evolve(self, &psi0.amps, times, KrylovOptions::default())?
                .into_iter()
                .map(|amps| SymmetricState { n: self.n, amps })
                .collect());
        }
        let spec = self.spectral()?;
        let coeffs = spec.decompose(&psi0.amps)?;
        Ok(times
            .iter()
            .map(|&t| SymmetricState {
                n: self.n,
                amps: spec.state_at(&coeffs, t),
            })
            .collect())
    }
}

impl Operator for SymmetricOperator {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        for (k, out) in y.iter_mut().enumerate() {
            let mut acc = x[k] * self.diag[k];
            if k > 0 {
                acc += x[k - 1] * self.hop[k - 1];
            }
            if k < self.n {
                acc += x[k + 1] * self.hop[k];
            }
            *out = acc;
        }
    }
}

/// Potentials `f[k]` on the Hamming-weight sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialFamily {
    Table { values: Vec<f64> },
    /// `strength` on sector `k`, zero elsewhere.
    SearchSector { k: usize, strength: f64 },
    /// `slope·k`, plus `height` on sectors within `half_width` of `center`.
    Spike {
        slope: f64,
        center: usize,
        half_width: usize,
        height: f64,
    },
    /// `slope·k` outside `[start, end]`, constant `level` inside.
    Plateau {
        slope: f64,
        start: usize,
        end: usize,
        level: f64,
    },
}

impl PotentialFamily {
    pub fn table(&self, n: usize) -> Result<Vec<f64>> {
        let t = match self {
            Self::Table { values } => {
                if values.len() != n + 1 {
                    return Err(Error::LengthMismatch {
                        expected: n + 1,
                        got: values.len(),
                    });
                }
                values.clone()
            }
            Self::SearchSector { k, strength } => {
                if *k > n {
                    return Err(Error::IndexOutOfRange { index: *k, dim: n + 1 });
                }
                (0..=n).map(|i| if i == *k { *strength } else { 0.0 }).collect()
            }
            Self::Spike {
                slope,
                center,
                half_width,
                height,
            } => (0..=n)
                .map(|k| slope * k as f64 + if k.abs_diff(*center) <= *half_width { *height } else { 0.0 })
                .collect(),
            Self::Plateau {
                slope,
                start,
                end,
                level,
            } => {
                if start > end {
                    return Err(Error::InvalidArgument(format!("plateau start {start} after end {end}")));
                }
                (0..=n)
                    .map(|k| if (*start..=*end).contains(&k) { *level } else { slope * k as f64 })
                    .collect()
            }
        };
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("potential has non-finite entries".into()));
        }
        Ok(t)
    }

    /// Reads a `k,f` CSV (header optional) into a table.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::InvalidArgument(format!("expected 2 columns, got {}", rec.len())));
            }
            match (rec[0].parse::<usize>(), rec[1].parse::<f64>()) {
                (Ok(k), Ok(f)) => rows.push((k, f)),
                _ if rows.is_empty() => continue,
                _ => return Err(Error::InvalidArgument(format!("bad potential row {:?}", rec))),
            }
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::InvalidArgument("sector indices must be exactly 0..=n".into()));
        }
        Ok(Self::Table {
            values: rows.into_iter().map(|r| r.1).collect(),
        })
    }
}

/// Critical rate `2^{−n} Σ_{k≥1} C(n,k)/(2k)` of the search walk
/// `−γΣX_i − |w⟩⟨w|`, where the two lowest levels anticross.
pub fn critical_search_gamma(n: usize) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    (1..=n)
        .map(|k| (ln_binomial(n, k) - n as f64 * ln2).exp() / (2.0 * k as f64))
        .sum()
}

/// Sector matrix element of `−γΣX_i` between `k` and `k + 1`.
pub fn sector_hop(n: usize, k: usize, gamma: f64) -> f64 {
    -gamma * (((k + 1) * (n - k)) as f64).sqrt()
}

/// `−γΣX_i + Σ_j f[|j|]|j⟩⟨j|` restricted to the Dicke sectors.
pub fn build_symmetric_walk(n: usize, gamma: f64, potential: &PotentialFamily) -> Result<SymmetricOperator> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let diag = potential.table(n)?;
    let hop = (0..n).map(|k| sector_hop(n, k, gamma)).collect();
    SymmetricOperator::new(n, diag, hop)
}

/// Sector image of an effective Hamiltonian with uniform class amplitudes.
///
/// `extra_bias[k]` is added to the diagonal of sector `k`; pass zeros when
/// the bias is already part of the effective diagonal.
pub fn effective_to_symmetric(eff: &EffectiveHamiltonian, extra_bias: &[f64]) -> Result<SymmetricOperator> {
    let n = eff.n;
    if extra_bias.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            got: extra_bias.len(),
        });
    }
    let by_weight = eff.diagonal_by_weight();
    let diag = (0..=n)
        .map(|k| by_weight[k] + extra_bias[k] + eff.same_weight_amp * (k * (n - k)) as f64)
        .collect();
    let hop = (0..n)
        .map(|k| eff.hop_amp * (((k + 1) * (n - k)) as f64).sqrt())
        .collect();
    SymmetricOperator::new(n, diag, hop)
}
