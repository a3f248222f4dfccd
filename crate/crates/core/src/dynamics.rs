//! Encoded quantum-walk search experiments.
//!
//! The unencoded reference is the hypercube search `−γΣX_i + s·P_marked`
//! started from the uniform superposition. The encoded run builds the full
//! gadget with a search bias, starts from the uniform superposition over the
//! low-energy manifold and evolves under the complete two-body Hamiltonian.
//!
//! Both Hamiltonians commute with permutations of the data qubits, and so do
//! their initial states. Encoded runs are therefore carried out exactly in
//! the permutation-symmetric block spanned by `|D_{n,k}⟩ ⊗ |a⟩`, of dimension
//! `(n+1)·2^n`; a full-space path is kept for cross-checks.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use log::{debug, info};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadget::{
    assemble_total, bias_sector_map, manifold_index, sector_for_weight, staircase, CorrectionMode,
    GadgetSpec, MAX_ENUMERATION_N,
};
use crate::perturbation::closed_form_hop;
use crate::propagate::{evolve, linspace, DenseSpectral, GapInfo, Method};
use crate::spin_model::{norm, IsingXZHamiltonian, MatrixFreeOperator, C64};
use crate::symmetric::{
    binomial, build_symmetric_walk, uniform_sector_amplitudes, PotentialFamily, SymmetricOperator,
    SymmetricState,
};

pub const DEFAULT_SAMPLES: usize = 512;

/// Largest bias scale accepted by [`calibrate`].
pub const MAX_CALIBRATION_ETA: f64 = 0.2;

/// Largest bias scale reached through [`calibrate_for_ratio`].
pub const MAX_RATIO_ETA: f64 = 1.0;

/// Largest `n` for the symmetric-block encoded runs.
pub const MAX_ENCODED_N: usize = 8;

/// The default sweep grid: 20 evenly spaced ratios over `[5, 100]`.
pub fn default_ratios() -> Vec<f64> {
    linspace(5.0, 100.0, 20)
}

/// A search bias on one boundary sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub sector: usize,
    pub value: f64,
}

impl Marker {
    /// `−Z` on the first auxiliary: lowers the all-ones data vertex.
    pub fn vertex() -> Self {
        Self {
            sector: 0,
            value: -1.0,
        }
    }

    /// `−Z` on the first auxiliary and `+Z` on the second.
    pub fn paired() -> Self {
        Self {
            sector: 1,
            value: 1.0,
        }
    }

    /// Marker addressing weight class `w` with the given signed sector value.
    pub fn for_weight(n: usize, w: usize, value: f64) -> Result<Self> {
        if w > n {
            return Err(Error::IndexOutOfRange { index: w, dim: n + 1 });
        }
        Ok(Self {
            sector: sector_for_weight(n, w),
            value,
        })
    }

    pub fn bias(&self, n: usize) -> Result<Vec<f64>> {
        if self.sector > n {
            return Err(Error::IndexOutOfRange {
                index: self.sector,
                dim: n + 1,
            });
        }
        let mut b = vec![0.0; n + 1];
        b[self.sector] = self.value;
        Ok(b)
    }

    /// Weight class moved by this marker and its signed relative shift per
    /// unit `η`, read from the empirical sector map where it is available.
    pub fn resolve(&self, n: usize) -> Result<MarkedClass> {
        self.bias(n)?;
        if (2..=MAX_ENUMERATION_N).contains(&n) {
            let map = bias_sector_map(n)?;
            let s = &map[self.sector];
            Ok(MarkedClass {
                weight: s.weight,
                shift: s.shift * self.value,
            })
        } else {
            Ok(MarkedClass {
                weight: n - self.sector,
                shift: 2.0 * self.value,
            })
        }
    }
}

/// The marked weight class and its energy shift relative to the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedClass {
    pub weight: usize,
    /// Signed shift per unit `η`; negative lowers the class.
    pub shift: f64,
}

impl MarkedClass {
    pub fn size(&self, n: usize) -> f64 {
        binomial(n, self.weight)
    }
}

/// Parameters of one encoded search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkCalibration {
    pub n: usize,
    /// Hop rate maximizing the unencoded search peak.
    pub gamma_opt: f64,
    /// Self-consistent coupling scale.
    pub gamma_prime: f64,
    /// The same definition evaluated once at unit couplings.
    pub gamma_prime_one_shot: f64,
    pub fixed_point_residual: f64,
    pub eta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub gamma_d: f64,
    pub gamma_a: f64,
    pub q0: f64,
}

impl WalkCalibration {
    pub fn j_over_eta(&self) -> f64 {
        self.j / self.eta
    }

    /// Gadget parameters with the given marker and the equal-gamma
    /// correction.
    pub fn spec(&self, marker: &Marker) -> Result<GadgetSpec> {
        Ok(GadgetSpec {
            n: self.n,
            j: self.j,
            q0: self.q0,
            eta: self.eta,
            gamma_d: self.gamma_d,
            gamma_a: self.gamma_a,
            bias: marker.bias(self.n)?,
            correction_mode: CorrectionMode::EqualGamma,
        })
    }
}

/// Sector form of `−γΣX_i + sign·Σ_{j∈class}|j⟩⟨j|` with a unit marker.
pub fn exact_search_reference(n: usize, gamma: f64, marked_weight: usize, sign: f64) -> Result<SymmetricOperator> {
    build_symmetric_walk(
        n,
        gamma,
        &PotentialFamily::SearchSector {
            k: marked_weight,
            strength: sign.signum(),
        },
    )
}

/// Full-space form of [`exact_search_reference`] on `n` qubits.
pub fn exact_search_reference_full(n: usize, gamma: f64, marked_weight: usize, sign: f64) -> Result<MatrixFreeOperator> {
    let diag = (0..1usize << n)
        .map(|x| if x.count_ones() as usize == marked_weight { sign.signum() } else { 0.0 })
        .collect();
    let flips: Vec<(usize, f64)> = (0..n).map(|q| (q, -gamma)).collect();
    MatrixFreeOperator::from_parts(diag, &flips)
}

/// Sector success probability at `t = π/Δ` and the gap `Δ`.
pub fn reference_peak(n: usize, gamma: f64, marked_weight: usize, sign: f64) -> Result<(f64, f64)> {
    let op = exact_search_reference(n, gamma, marked_weight, sign)?;
    let spec = op.spectral()?;
    let gap = spec.gap().gap;
    if gap <= 0.0 {
        return Err(Error::Eigensolver(format!("no gap in the n={n} reference walk")));
    }
    let psi0 = SymmetricState::uniform(n);
    let coeffs = spec.decompose(&psi0.amps)?;
    let psi = spec.state_at(&coeffs, PI / gap);
    Ok((psi[marked_weight].norm_sqr(), gap))
}

fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

fn gamma_cache() -> &'static Mutex<HashMap<usize, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Hop rate maximizing the single-vertex search peak `p(π/Δ)`.
///
/// A coarse scan over `[0.01, 2]` brackets the maximum, then golden-section
/// search refines it. Results are memoized per `n`.
pub fn optimal_gamma(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument("the search calibration needs n ≥ 2".into()));
    }
    if let Some(&g) = gamma_cache().lock().expect("cache lock").get(&n) {
        return Ok(g);
    }
    let f = |g: f64| reference_peak(n, g, n, -1.0).map(|r| r.0);
    let grid = linspace(0.01, 2.0, 200);
    let vals = grid.iter().map(|&g| f(g)).collect::<Result<Vec<f64>>>()?;
    let best = (0..vals.len())
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .expect("non-empty grid");
    if best == 0 || best + 1 == grid.len() {
        return Err(Error::Bracket(format!(
            "search peak for n={n} is maximal at the scan edge γ={}",
            grid[best]
        )));
    }
    let g = golden_max(&f, grid[best - 1], grid[best + 1], 1e-10)?;
    debug!("optimal gamma n={n}: {g}");
    gamma_cache().lock().expect("cache lock").insert(n, g);
    Ok(g)
}

/// `γ′ = √(3γ)/(2η)`.
pub fn gamma_prime_closed_form(gamma: f64, eta: f64) -> f64 {
    (3.0 * gamma).sqrt() / (2.0 * eta)
}

/// `|⟨D_{n,0}|H_eff|D_{n,1}⟩|` for `J = x`, `γ_d = γ_a = ηx`.
fn dicke_hop(n: usize, eta: f64, x: f64) -> f64 {
    let spec = GadgetSpec::new(n, x).with_gammas(eta * x, eta * x);
    (n as f64).sqrt() * closed_form_hop(&spec).abs()
}

/// Solves `γ′ = γ√n / |⟨D_{n,0}|H_eff|D_{n,1}⟩|` with `H_eff` built at
/// `J = γ′`, `γ_d = γ_a = ηγ′`. Returns the root and its residual.
pub fn solve_gamma_prime(n: usize, gamma: f64, eta: f64) -> Result<(f64, f64)> {
    let g = |x: f64| x * dicke_hop(n, eta, x) - gamma * (n as f64).sqrt();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracket("γ′ fixed point not bracketed".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let residual = (x - gamma * (n as f64).sqrt() / dicke_hop(n, eta, x)).abs();
    Ok((x, residual))
}

fn calibrate_unchecked(n: usize, eta: f64) -> Result<WalkCalibration> {
    let gamma_opt = optimal_gamma(n)?;
    let (gamma_prime, fixed_point_residual) = solve_gamma_prime(n, gamma_opt, eta)?;
    // Evaluating the right-hand side once at J = γ_d/η = 1.
    let gamma_prime_one_shot = gamma_opt * (n as f64).sqrt() / dicke_hop(n, eta, 1.0);
    info!(
        "calibration n={n} eta={eta}: gamma_opt={gamma_opt:.10} gamma'={gamma_prime:.10} one-shot={gamma_prime_one_shot:.10}"
    );
    Ok(WalkCalibration {
        n,
        gamma_opt,
        gamma_prime,
        gamma_prime_one_shot,
        fixed_point_residual,
        eta,
        j: gamma_prime,
        gamma_d: eta * gamma_prime,
        gamma_a: eta * gamma_prime,
        q0: gamma_prime / 2.0,
    })
}

/// Calibration at a given bias scale `0 < η ≤ 0.2`.
pub fn calibrate(n: usize, eta: f64) -> Result<WalkCalibration> {
    if !(eta > 0.0 && eta <= MAX_CALIBRATION_ETA) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0, {MAX_CALIBRATION_ETA}], got {eta}"
        )));
    }
    calibrate_unchecked(n, eta)
}

/// Calibration at a given `J/η`; `η` follows from `J = γ′(η)`.
pub fn calibrate_for_ratio(n: usize, j_over_eta: f64) -> Result<WalkCalibration> {
    if !(j_over_eta.is_finite() && j_over_eta > 0.0) {
        return Err(Error::InvalidArgument(format!("J/eta must be positive, got {j_over_eta}")));
    }
    let gamma = optimal_gamma(n)?;
    let eta = ((3.0 * gamma).sqrt() / (2.0 * j_over_eta)).sqrt();
    if eta > MAX_RATIO_ETA {
        return Err(Error::InvalidArgument(format!(
            "J/eta = {j_over_eta} needs eta = {eta} > {MAX_RATIO_ETA}"
        )));
    }
    calibrate_unchecked(n, eta)
}

/// Hop rate of the unencoded walk with the same hop-to-marker ratio as the
/// encoded effective Hamiltonian (the reference marker has unit size).
pub fn reference_gamma(cal: &WalkCalibration, marked: &MarkedClass) -> Result<f64> {
    let spec = cal.spec(&Marker::vertex())?;
    Ok(closed_form_hop(&spec).abs() / (marked.shift.abs() * cal.eta))
}

/// The Hamiltonian restricted to permutation-symmetric data states.
#[derive(Debug, Clone)]
pub struct SymmetricBlock {
    pub n_data: usize,
    pub n_aux: usize,
    /// Row/column `k·2^{n_aux} + a` is `|D_{n,k}⟩ ⊗ |a⟩`.
    pub matrix: DMatrix<f64>,
    /// Largest relative norm of `H v` outside the block.
    pub symmetry_residual: f64,
}

impl SymmetricBlock {
    pub fn index(&self, k: usize, aux: usize) -> usize {
        (k << self.n_aux) | aux
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn from_hamiltonian(h: &IsingXZHamiltonian) -> Result<Self> {
        let l = h.layout;
        let (nd, na) = (l.n_data, l.n_aux);
        if nd > 20 {
            return Err(Error::TooLarge { dim: nd, limit: 20 });
        }
        let diag = h.diagonal();
        let flips = h.flip_table();
        let mut by_weight = vec![Vec::new(); nd + 1];
        for d in 0..1usize << nd {
            by_weight[d.count_ones() as usize].push(d);
        }
        let inv: Vec<f64> = (0..=nd).map(|k| 1.0 / binomial(nd, k).sqrt()).collect();
        let na_dim = 1usize << na;
        let bdim = (nd + 1) * na_dim;
        let mut m = DMatrix::<f64>::zeros(bdim, bdim);
        let mut acc = vec![0.0f64; l.dim()];
        let mut seen = vec![false; l.dim()];
        let mut touched = Vec::new();
        let mut worst: f64 = 0.0;
        for k in 0..=nd {
            for a in 0..na_dim {
                let col = k * na_dim + a;
                let mut add = |j: usize, v: f64| {
                    if !seen[j] {
                        seen[j] = true;
                        touched.push(j);
                    }
                    acc[j] += v;
                };
                for &d in &by_weight[k] {
                    let i = l.compose(d, a);
                    add(i, diag[i] * inv[k]);
                    for &(q, c) in &flips {
                        add(i ^ (1 << q), c * inv[k]);
                    }
                }
                let row = |j: usize| {
                    let w = l.data_bits(j).count_ones() as usize;
                    (w * na_dim + l.aux_bits(j), inv[w])
                };
                for &j in &touched {
                    let (r, s) = row(j);
                    m[(r, col)] += acc[j] * s;
                }
                // Distance between H v and its projection back onto the block.
                let mut total = 0.0;
                let mut outside = 0.0;
                for &j in &touched {
                    let (r, s) = row(j);
                    total += acc[j] * acc[j];
                    outside += (acc[j] - m[(r, col)] * s).powi(2);
                    acc[j] = 0.0;
                    seen[j] = false;
                }
                touched.clear();
                if total > 0.0 {
                    worst = worst.max((outside / total).sqrt());
                }
            }
        }
        if worst > 1e-9 {
            return Err(Error::NotPermutationSymmetric(worst));
        }
        let m = (&m + m.transpose()) * 0.5;
        Ok(Self {
            n_data: nd,
            n_aux: na,
            matrix: m,
            symmetry_residual: worst,
        })
    }
}

/// Time series of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub success_prob: Vec<f64>,
    pub manifold_leakage: Vec<f64>,
    pub gap: f64,
    /// Success probability at `t = π/Δ`.
    pub peak_prob: f64,
    pub peak_time: f64,
    /// Success probability at `t = Δ/π`, kept for comparison.
    pub p_at_inverse_time: f64,
    /// Largest `|‖ψ(t)‖ − 1|` over the samples.
    pub norm_drift: f64,
}

impl EvolutionResult {
    /// `t·Δ/π` for every sample.
    pub fn scaled_times(&self) -> Vec<f64> {
        self.times.iter().map(|t| t * self.gap / PI).collect()
    }

    pub fn max_success(&self) -> f64 {
        self.success_prob.iter().copied().fold(0.0, f64::max)
    }
}

/// An encoded search run and the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRun {
    pub calibration: WalkCalibration,
    pub marker: Marker,
    pub marked: MarkedClass,
    pub gap_info: GapInfo,
    pub result: EvolutionResult,
}

fn sample_times(gap: f64, samples: usize) -> Result<Vec<f64>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    Ok(linspace(0.0, 2.0 * PI / gap, samples))
}

/// Initial state and observables of the encoded walk in block coordinates.
struct BlockObservables {
    n: usize,
    manifold: Vec<usize>,
    marked: usize,
}

impl BlockObservables {
    fn new(block: &SymmetricBlock, marked_weight: usize) -> Self {
        let n = block.n_data;
        Self {
            n,
            manifold: (0..=n).map(|k| block.index(k, staircase(n - k))).collect(),
            marked: block.index(marked_weight, staircase(n - marked_weight)),
        }
    }

    fn initial(&self, dim: usize) -> Vec<C64> {
        let mut psi = vec![C64::new(0.0, 0.0); dim];
        for (k, a) in uniform_sector_amplitudes(self.n).into_iter().enumerate() {
            psi[self.manifold[k]] = C64::new(a, 0.0);
        }
        psi
    }

    fn success(&self, psi: &[C64]) -> f64 {
        psi[self.marked].norm_sqr()
    }

    fn leakage(&self, psi: &[C64]) -> f64 {
        1.0 - self.manifold.iter().map(|&i| psi[i].norm_sqr()).sum::<f64>()
    }
}

fn check_encoded_n(n: usize) -> Result<()> {
    if !(2..=MAX_ENCODED_N).contains(&n) {
        return Err(Error::InvalidArgument(format!("encoded runs need 2 ≤ n ≤ {MAX_ENCODED_N}, got {n}")));
    }
    Ok(())
}

/// Spectral data of the encoded search in the symmetric block.
pub struct EncodedSystem {
    pub calibration: WalkCalibration,
    pub marker: Marker,
    pub marked: MarkedClass,
    pub hamiltonian: IsingXZHamiltonian,
    pub block: SymmetricBlock,
    pub spectral: DenseSpectral,
}

impl EncodedSystem {
    pub fn new(cal: &WalkCalibration, marker: Marker) -> Result<Self> {
        check_encoded_n(cal.n)?;
        let marked = marker.resolve(cal.n)?;
        let hamiltonian = assemble_total(&cal.spec(&marker)?)?;
        let block = SymmetricBlock::from_hamiltonian(&hamiltonian)?;
        let spectral = DenseSpectral::new(&block.matrix)?;
        Ok(Self {
            calibration: cal.clone(),
            marker,
            marked,
            hamiltonian,
            block,
            spectral,
        })
    }

    pub fn gap_info(&self) -> GapInfo {
        self.spectral.gap()
    }

    /// Success probabilities at the given times, with leakage and norms.
    pub fn observe(&self, times: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let obs = BlockObservables::new(&self.block, self.marked.weight);
        let psi0 = obs.initial(self.block.dim());
        let coeffs = self.spectral.decompose(&psi0)?;
        let mut success = Vec::with_capacity(times.len());
        let mut leakage = Vec::with_capacity(times.len());
        let mut drift: f64 = 0.0;
        for &t in times {
            let psi = self.spectral.state_at(&coeffs, t);
            drift = drift.max((norm(&psi) - 1.0).abs());
            success.push(obs.success(&psi));
            leakage.push(obs.leakage(&psi));
        }
        Ok((success, leakage, drift))
    }

    pub fn run(&self, samples: usize) -> Result<EncodedRun> {
        let gap_info = self.gap_info();
        let gap = gap_info.gap;
        if gap <= 0.0 {
            return Err(Error::Eigensolver("encoded block has no gap".into()));
        }
        let times = sample_times(gap, samples)?;
        let (success_prob, manifold_leakage, norm_drift) = self.observe(&times)?;
        let (special, _, _) = self.observe(&[gap / PI, PI / gap])?;
        Ok(EncodedRun {
            calibration: self.calibration.clone(),
            marker: self.marker,
            marked: self.marked,
            gap_info,
            result: EvolutionResult {
                times,
                success_prob,
                manifold_leakage,
                gap,
                peak_prob: special[1],
                peak_time: PI / gap,
                p_at_inverse_time: special[0],
                norm_drift,
            },
        })
    }
}

/// Encoded search at `J/η = j_over_eta` with the given marker.
pub fn run_encoded(n: usize, j_over_eta: f64, samples: usize, marker: Marker) -> Result<EncodedRun> {
    check_encoded_n(n)?;
    let cal = calibrate_for_ratio(n, j_over_eta)?;
    EncodedSystem::new(&cal, marker)?.run(samples)
}

/// Encoded single-vertex search at `J/η = j_over_eta`.
pub fn run_encoded_search(n: usize, j_over_eta: f64, samples: usize) -> Result<EncodedRun> {
    run_encoded(n, j_over_eta, samples, Marker::vertex())
}

/// Full-space evolution of the encoded search at the given times: success
/// probability, manifold leakage and norm drift.
pub fn run_encoded_full(
    cal: &WalkCalibration,
    marker: Marker,
    times: &[f64],
    method: Method,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = cal.n;
    check_encoded_n(n)?;
    let marked = marker.resolve(n)?;
    let h = assemble_total(&cal.spec(&marker)?)?;
    let op = MatrixFreeOperator::new(&h);
    let manifold: Vec<usize> = (0..1usize << n).map(|d| manifold_index(n, d)).collect();
    let mut psi0 = vec![C64::new(0.0, 0.0); h.dim()];
    let amp = (0.5f64).powf(n as f64 / 2.0);
    for &i in &manifold {
        psi0[i] = C64::new(amp, 0.0);
    }
    let states = evolve(&op, &psi0, times, method)?;
    let mut success = Vec::with_capacity(times.len());
    let mut leakage = Vec::with_capacity(times.len());
    let mut drift: f64 = 0.0;
    for psi in &states {
        drift = drift.max((norm(psi) - 1.0).abs());
        success.push(
            manifold
                .iter()
                .enumerate()
                .filter(|(d, _)| d.count_ones() as usize == marked.weight)
                .map(|(_, &i)| psi[i].norm_sqr())
                .sum(),
        );
        leakage.push(1.0 - manifold.iter().map(|&i| psi[i].norm_sqr()).sum::<f64>());
    }
    Ok((success, leakage, drift))
}

/// The ratio-matched unencoded reference for an encoded run.
pub fn run_reference(n: usize, gamma: f64, marked: &MarkedClass, samples: usize) -> Result<EvolutionResult> {
    let op = exact_search_reference(n, gamma, marked.weight, marked.shift)?;
    let spec = op.spectral()?;
    let gap = spec.gap().gap;
    if gap <= 0.0 {
        return Err(Error::Eigensolver("reference walk has no gap".into()));
    }
    let times = sample_times(gap, samples)?;
    let psi0 = SymmetricState::uniform(n);
    let coeffs = spec.decompose(&psi0.amps)?;
    let at = |t: f64| spec.state_at(&coeffs, t);
    let mut success_prob = Vec::with_capacity(samples);
    let mut drift: f64 = 0.0;
    for &t in &times {
        let psi = at(t);
        drift = drift.max((norm(&psi) - 1.0).abs());
        success_prob.push(psi[marked.weight].norm_sqr());
    }
    Ok(EvolutionResult {
        manifold_leakage: vec![0.0; times.len()],
        times,
        success_prob,
        gap,
        peak_prob: at(PI / gap)[marked.weight].norm_sqr(),
        peak_time: PI / gap,
        p_at_inverse_time: at(gap / PI)[marked.weight].norm_sqr(),
        norm_drift: drift,
    })
}

/// Reference for the encoded run at `(n, J/η)` with the given marker.
pub fn reference_for(n: usize, j_over_eta: f64, samples: usize, marker: Marker) -> Result<EvolutionResult> {
    let cal = calibrate_for_ratio(n, j_over_eta)?;
    let marked = marker.resolve(n)?;
    run_reference(n, reference_gamma(&cal, &marked)?, &marked, samples)
}

/// One row of the curve file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    #[serde(rename = "J_over_eta")]
    pub j_over_eta: f64,
    pub t: f64,
    pub t_scaled: f64,
    pub p_success: f64,
    pub leakage: f64,
}

pub fn curve_rows(n: usize, j_over_eta: f64, result: &EvolutionResult) -> Vec<CurveRow> {
    result
        .times
        .iter()
        .zip(result.scaled_times())
        .zip(result.success_prob.iter().zip(&result.manifold_leakage))
        .map(|((&t, t_scaled), (&p, &leak))| CurveRow {
            n,
            j_over_eta,
            t,
            t_scaled,
            p_success: p,
            leakage: leak,
        })
        .collect()
}

/// One row of the sweep file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    #[serde(rename = "J_over_eta")]
    pub j_over_eta: f64,
    pub p_peak: f64,
    pub p_reference: f64,
    pub gap: f64,
}

/// A failed sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepError {
    pub n: usize,
    #[serde(rename = "J_over_eta")]
    pub j_over_eta: f64,
    pub error: String,
}

/// Outcome of a sweep, ordered by `(n, J/η)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub errors: Vec<SweepError>,
}

/// Peak probability and gap of one encoded cell.
pub fn encoded_peak(n: usize, j_over_eta: f64, marker: Marker) -> Result<(f64, f64, f64)> {
    let cal = calibrate_for_ratio(n, j_over_eta)?;
    let sys = EncodedSystem::new(&cal, marker)?;
    let gap = sys.gap_info().gap;
    if gap <= 0.0 {
        return Err(Error::Eigensolver("encoded block has no gap".into()));
    }
    let (p, _, _) = sys.observe(&[PI / gap])?;
    let (p_ref, _) = reference_peak(n, reference_gamma(&cal, &sys.marked)?, sys.marked.weight, sys.marked.shift)?;
    Ok((p[0], p_ref, gap))
}

/// Evaluates every `(n, J/η)` cell not already present in `skip`.
///
/// Cells run in parallel; the merged output is sorted by key and does not
/// depend on scheduling.
pub fn sweep_peak(
    ns: &[usize],
    ratios: &[f64],
    marker: Marker,
    skip: &dyn Fn(usize, f64) -> bool,
) -> Result<SweepOutcome> {
    if ns.is_empty() || ratios.is_empty() {
        return Err(Error::InvalidArgument("sweep ranges must be non-empty".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidArgument(format!("ratio {r} is not positive")));
    }
    let mut cells: Vec<(usize, f64)> = Vec::new();
    for &n in ns {
        for &r in ratios {
            if !skip(n, r) {
                cells.push((n, r));
            }
        }
    }
    // Warm the calibration cache once per n so parallel cells share it.
    for &n in ns {
        optimal_gamma(n)?;
    }
    type Cell = ((usize, f64), Result<(f64, f64, f64)>);
    let results: Vec<Cell> = cells
        .par_iter()
        .map(|&(n, r)| ((n, r), encoded_peak(n, r, marker)))
        .collect();
    let mut out = SweepOutcome::default();
    for ((n, r), res) in results {
        match res {
            Ok((p_peak, p_reference, gap)) => out.rows.push(SweepRow {
                n,
                j_over_eta: r,
                p_peak,
                p_reference,
                gap,
            }),
            Err(e) => out.errors.push(SweepError {
                n,
                j_over_eta: r,
                error: e.to_string(),
            }),
        }
    }
    sort_sweep_rows(&mut out.rows);
    out.errors
        .sort_by(|a, b| a.n.cmp(&b.n).then(a.j_over_eta.total_cmp(&b.j_over_eta)));
    Ok(out)
}

pub fn sort_sweep_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.j_over_eta.total_cmp(&b.j_over_eta)));
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    // Write to a sibling file first so readers never see a partial table.
    let tmp = path.with_extension("partial");
    File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub const CURVE_COLUMNS: [&str; 6] = ["n", "J_over_eta", "t", "t_scaled", "p_success", "leakage"];
pub const SWEEP_COLUMNS: [&str; 5] = ["n", "J_over_eta", "p_peak", "p_reference", "gap"];
pub const SWEEP_ERROR_COLUMNS: [&str; 3] = ["n", "J_over_eta", "error"];

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_rows(path, rows, &CURVE_COLUMNS)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows, &SWEEP_COLUMNS)
}

pub fn write_sweep_errors_csv(path: &Path, rows: &[SweepError]) -> Result<()> {
    write_rows(path, rows, &SWEEP_ERROR_COLUMNS)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::InvalidArgument(format!(
            "{}: expected columns {header:?}, found {found:?}",
            path.display()
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    read_rows(path, &CURVE_COLUMNS)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path, &SWEEP_COLUMNS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagate::operator_to_dense;
    use crate::symmetric::project_symmetric;
    use crate::spin_model::StateVector;

    #[test]
    fn optimal_gamma_decreases_with_n() {
        let g: Vec<f64> = (2..=8).map(|n| optimal_gamma(n).unwrap()).collect();
        for w in g.windows(2) {
            assert!(w[1] < w[0], "{g:?}");
        }
        // Peak is a local maximum.
        let n = 4;
        let f = |x: f64| reference_peak(n, x, n, -1.0).unwrap().0;
        let best = f(g[2]);
        assert!(best >= f(g[2] * 0.98) && best >= f(g[2] * 1.02));
        assert!(optimal_gamma(1).is_err());
    }

    #[test]
    fn gamma_prime_fixed_point() {
        let n = 4;
        let gamma = optimal_gamma(n).unwrap();
        for eta in [0.01, 0.05, 0.2] {
            let (gp, residual) = solve_gamma_prime(n, gamma, eta).unwrap();
            assert!(residual < 1e-10 * gp, "{residual}");
            assert!((gp - gamma_prime_closed_form(gamma, eta)).abs() < 1e-10 * gp);
        }
        let cal = calibrate(n, 0.05).unwrap();
        assert_eq!(cal.j, cal.gamma_prime);
        assert_eq!(cal.gamma_d, cal.eta * cal.gamma_prime);
        assert_eq!(cal.q0, cal.gamma_prime / 2.0);
        assert!((cal.gamma_prime_one_shot - 3.0 * gamma / (4.0 * 0.05f64.powi(2))).abs() < 1e-9 * cal.gamma_prime_one_shot);
        assert!(calibrate(n, 0.3).is_err());
        assert!(calibrate(n, 0.0).is_err());
    }

    #[test]
    fn ratio_calibration() {
        let cal = calibrate_for_ratio(3, 40.0).unwrap();
        assert!((cal.j_over_eta() - 40.0).abs() < 1e-9);
        assert!(calibrate_for_ratio(3, -1.0).is_err());
    }

    #[test]
    fn dicke_overlap_counting() {
        let n = 5;
        let spec = GadgetSpec::new(n, 2.0).with_gammas(0.03, 0.03);
        let eff = crate::perturbation::closed_form_effective(
            &spec,
            &crate::perturbation::fluctuation_table(&spec).unwrap(),
        )
        .unwrap();
        let m = eff.to_dense();
        let d0 = SymmetricState::sector(n, 0).unwrap().to_full().unwrap();
        let d1 = SymmetricState::sector(n, 1).unwrap().to_full().unwrap();
        let mut h_d1 = vec![C64::new(0.0, 0.0); 1 << n];
        crate::spin_model::Operator::apply_into(&m, &d1.amps, &mut h_d1);
        let overlap = d0.inner(&StateVector::from_amplitudes(h_d1)).norm();
        assert!((overlap - (n as f64).sqrt() * eff.hop_amp.abs()).abs() < 1e-15);
    }

    #[test]
    fn marker_resolution() {
        for n in 2..=6 {
            let v = Marker::vertex().resolve(n).unwrap();
            assert_eq!(v.weight, n);
            assert!((v.shift + 2.0).abs() < 1e-9);
            let p = Marker::paired().resolve(n).unwrap();
            assert_eq!(p.weight, n - 1);
            assert!((p.shift - 2.0).abs() < 1e-9);
        }
        let m = Marker::for_weight(4, 1, -0.5).unwrap();
        assert_eq!(m.sector, 3);
        assert_eq!(m.resolve(4).unwrap().weight, 1);
        assert_eq!(Marker::vertex().resolve(12).unwrap().weight, 12);
    }

    #[test]
    fn block_matches_full_space() {
        let n = 3;
        let cal = calibrate_for_ratio(n, 20.0).unwrap();
        let sys = EncodedSystem::new(&cal, Marker::vertex()).unwrap();
        assert_eq!(sys.block.dim(), (n + 1) << n);
        assert!(sys.block.symmetry_residual < 1e-12);
        let gap = sys.gap_info().gap;
        let times = linspace(0.0, 2.0 * PI / gap, 40);
        let (ps, ls, drift) = sys.observe(&times).unwrap();
        assert!(drift < 1e-10);
        let (pf, lf, drift_f) = run_encoded_full(&cal, Marker::vertex(), &times, Method::Dense).unwrap();
        assert!(drift_f < 1e-10);
        for i in 0..times.len() {
            assert!((ps[i] - pf[i]).abs() < 1e-9, "{i}: {} {}", ps[i], pf[i]);
            assert!((ls[i] - lf[i]).abs() < 1e-9);
        }
        // The block spectrum is part of the full spectrum.
        let full = DenseSpectral::new(&assemble_total(&cal.spec(&Marker::vertex()).unwrap()).unwrap().build_dense().unwrap()).unwrap();
        for e in &sys.spectral.eigenvalues {
            let closest = full.eigenvalues.iter().map(|f| (f - e).abs()).fold(f64::INFINITY, f64::min);
            assert!(closest < 1e-9);
        }
    }

    #[test]
    fn block_rejects_asymmetric_hamiltonian() {
        let spec = GadgetSpec::new(2, 1.0).with_gammas(0.1, 0.1);
        let mut h = assemble_total(&spec).unwrap();
        h.push(crate::spin_model::PauliTerm::z(0, 0.3)).unwrap();
        assert!(matches!(
            SymmetricBlock::from_hamiltonian(&h),
            Err(Error::NotPermutationSymmetric(_))
        ));
    }

    #[test]
    fn encoded_run_starts_uniform() {
        let run = run_encoded_search(4, 50.0, 64).unwrap();
        let r = &run.result;
        assert_eq!(r.times.len(), 64);
        assert!((r.success_prob[0] - 1.0 / 16.0).abs() < 1e-12);
        assert!(r.manifold_leakage[0].abs() < 1e-12);
        assert!(r.norm_drift < 1e-10);
        assert!(r.success_prob.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        assert!((r.times.last().unwrap() - 2.0 * PI / r.gap).abs() < 1e-9);
        let rows = curve_rows(4, 50.0, r);
        assert!((rows.last().unwrap().t_scaled - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reference_sector_matches_full_space() {
        let n = 6;
        let g = optimal_gamma(n).unwrap();
        let marked = MarkedClass { weight: n, shift: -2.0 };
        let r = run_reference(n, g, &marked, 50).unwrap();
        let op = exact_search_reference_full(n, g, n, -1.0).unwrap();
        let m = operator_to_dense(&op, 1 << 12).unwrap();
        let psi0 = vec![C64::new(0.125, 0.0); 64];
        let states = DenseSpectral::new(&m).unwrap().evolve(&psi0, &r.times).unwrap();
        for (psi, p) in states.iter().zip(&r.success_prob) {
            assert!((psi[63].norm_sqr() - p).abs() < 1e-10);
            let (_, leak) = project_symmetric(&StateVector::from_amplitudes(psi.clone()), n).unwrap();
            assert!(leak.abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow { n: 2, j_over_eta: 5.0, p_peak: 0.1, p_reference: 0.2, gap: 0.3 },
            SweepRow { n: 2, j_over_eta: f64::INFINITY, p_peak: 1.0 / 3.0, p_reference: 0.2, gap: 1e-7 },
        ];
        let p = dir.path().join("s.csv");
        write_sweep_csv(&p, &rows).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("n,J_over_eta,p_peak,p_reference,gap\n"));
        assert!(read_curve_csv(&p).is_err());
    }
}
