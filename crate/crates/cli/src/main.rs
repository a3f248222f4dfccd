//! `hypergadget` command-line driver.
//!
//! Exit status is 0 when every requested check passes, 1 when a check
//! fails and 2 on errors (bad arguments, I/O, numerical failures).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hypergadget::compiler::{
    exact_unitary, spectral_distance, trace_norm_distance, trotter_bound, trotter_bound_matrix_free, trotterize,
};
use hypergadget::dynamics::{
    curve_rows, default_ratios, read_sweep_csv, reference_for, run_encoded, sort_sweep_rows, sweep_peak,
    write_curve_csv, write_sweep_csv, write_sweep_errors_csv, CurveRow, Marker, SweepRow, DEFAULT_SAMPLES,
};
use hypergadget::gadget::{
    assemble_total, bias_sector_map, enumerate_manifold, verify_single_flip_structure, GadgetSpec,
};
use hypergadget::perturbation::{
    closed_form_effective, compare_effective, fluctuation_table, second_order_numeric,
};
use hypergadget::propagate::{evolve, linspace, Method};
use hypergadget::spin_model::{MatrixFreeOperator, C64};
use hypergadget::symmetric::{
    build_symmetric_walk, critical_search_gamma, PotentialFamily, SymmetricState,
};

/// Simulate hypercube search walks encoded in two-body Ising gadgets.
#[derive(Parser, Debug)]
#[command(name = "hypergadget", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Enumerate the low-energy manifold and check its excitation structure.
    Gadget,
    /// Compare the numeric second-order effective Hamiltonian with closed forms.
    Effective,
    /// Time curves of the encoded search walk.
    Walk,
    /// Peak success probability over a grid of n and J/η.
    Sweep,
    /// Walk in the symmetric subspace of the bare hypercube.
    Sym,
    /// Trotter gate schedule for the gadget Hamiltonian.
    Compile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
enum Verify {
    Auto,
    On,
    Off,
}

/// Every option may also be given in a TOML file passed with `--config`,
/// using the long flag name with `_` for `-`. Flags override the file.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    /// TOML configuration file.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Number of data qubits.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Comma-separated data-qubit counts for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Coupling scale J.
    #[arg(long = "J", global = true)]
    #[serde(rename = "J")]
    j: Option<f64>,
    /// Bias scale η.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Transverse amplitude (γ_d = γ_a), or the walk rate for `sym`.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Single J/η ratio.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Comma-separated J/η ratios.
    #[arg(long, global = true, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Time samples per trajectory.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Output file (walk, sweep, sym) or directory (gadget, effective, compile).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Logical Hamming weight to mark.
    #[arg(long, global = true)]
    mark_weight: Option<usize>,
    /// Also write exact-reference curves (J_over_eta = inf).
    #[arg(long, global = true)]
    #[serde(default)]
    reference: bool,
    /// Tolerance on numeric-versus-closed-form deviations.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Trotter step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Trotter steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Dense unitary check for `compile`.
    #[arg(long, global = true, value_enum)]
    verify: Option<Verify>,
    /// Random probe states for the matrix-free `compile` check.
    #[arg(long, global = true)]
    probes: Option<usize>,
    /// End time for `sym`; defaults to π/Δ.
    #[arg(long, global = true)]
    t_max: Option<f64>,
    /// Two-column CSV `k,f` giving the sector potential for `sym`.
    #[arg(long, global = true)]
    potential_csv: Option<PathBuf>,
    /// Sector potential for `sym` (config file only).
    #[arg(skip)]
    potential: Option<PotentialFamily>,
}

macro_rules! overlay {
    ($cli:ident, $file:ident; $($f:ident),*) => {
        $( if $cli.$f.is_none() { $cli.$f = $file.$f; } )*
    };
}

impl Settings {
    fn merged(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        overlay!(self, file; n, ns, j, eta, gamma, ratio, ratios, samples, out, threads, seed,
                 mark_weight, tol, dt, steps, verify, probes, t_max, potential_csv, potential);
        self.reference |= file.reference;
        Ok(self)
    }

    fn j(&self) -> f64 {
        self.j.unwrap_or(1.0)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn out_file(&self, default: &str) -> Result<PathBuf> {
        let path = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    fn ratios(&self) -> Vec<f64> {
        match (&self.ratio, &self.ratios) {
            (Some(r), _) => vec![*r],
            (None, Some(rs)) => rs.clone(),
            (None, None) => default_ratios(),
        }
    }

    fn marker(&self, n: usize) -> Result<Marker> {
        Ok(match self.mark_weight {
            Some(w) => Marker::for_weight(n, w, -1.0)?,
            None => Marker::vertex(),
        })
    }
}

/// Writes through a sibling temporary file so readers never see a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::File::create(&tmp)?.write_all(bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Serialize)]
struct MarkCheck {
    weight: usize,
    sector: usize,
    expected_shift: f64,
    measured_shift: f64,
    ok: bool,
}

#[derive(Serialize)]
struct StaircaseEntry {
    weight: usize,
    aux_ones: usize,
    sector: usize,
}

fn cmd_gadget(s: &Settings) -> Result<bool> {
    let n = s.n.unwrap_or(2);
    let j = s.j();
    let eta = s.eta.unwrap_or(0.0);
    let mut spec = GadgetSpec::new(n, j).with_eta(eta);
    let sector_map = if (2..=hypergadget::gadget::MAX_ENUMERATION_N).contains(&n) {
        Some(bias_sector_map(n)?)
    } else {
        None
    };
    let mut mark_sector = None;
    if let Some(w) = s.mark_weight {
        let map = sector_map.as_ref().ok_or_else(|| anyhow!("--mark-weight needs 2 ≤ n ≤ 8"))?;
        let entry = map
            .iter()
            .find(|e| e.weight == w)
            .ok_or_else(|| anyhow!("no sector addresses weight {w}"))?;
        let mut b = vec![0.0; n + 1];
        b[entry.sector] = 1.0;
        spec = spec.with_bias(b);
        mark_sector = Some((w, entry.sector, entry.shift));
    }
    spec.validate()?;
    let manifold = enumerate_manifold(&spec)?;
    let flips = verify_single_flip_structure(&spec)?;
    let tol = 1e-9 * j.abs().max(1.0);

    let mark = mark_sector.map(|(w, sector, unit)| {
        let class_energy = |weight: usize| {
            manifold
                .entries
                .iter()
                .find(|e| e.weight == weight)
                .map(|e| e.energy)
                .expect("every weight is present")
        };
        let other = if w == 0 { 1 } else { 0 };
        let measured = class_energy(w) - class_energy(other);
        let expected = eta * unit;
        MarkCheck {
            weight: w,
            sector,
            expected_shift: expected,
            measured_shift: measured,
            ok: (measured - expected).abs() <= tol,
        }
    });
    let flat_ok = eta != 0.0 || manifold.spread < tol;
    let ok = flips.ok() && flat_ok && mark.as_ref().is_none_or(|m| m.ok);
    let staircase: Vec<StaircaseEntry> = (0..=n)
        .map(|w| StaircaseEntry {
            weight: w,
            aux_ones: n - w,
            sector: hypergadget::gadget::sector_for_weight(n, w),
        })
        .collect();

    let table = manifold.table();
    print!("{table}");
    println!(
        "spread {:.3e}  flips checked {}  violations {}",
        manifold.spread,
        flips.pairs_checked,
        flips.violations.len()
    );
    if let Some(m) = &mark {
        println!(
            "weight {} on sector {}: shift {:.6e} (expected {:.6e})",
            m.weight, m.sector, m.measured_shift, m.expected_shift
        );
    }
    let dir = s.out_dir()?;
    write_atomic(&dir.join(format!("gadget_n{n}.txt")), table.as_bytes())?;
    write_json(
        &dir.join(format!("gadget_n{n}.json")),
        &serde_json::json!({
            "spec": spec,
            "manifold": manifold,
            "staircase": staircase,
            "sector_map": sector_map,
            "single_flip": flips,
            "mark": mark,
            "ok": ok,
        }),
    )?;
    Ok(ok)
}

fn cmd_effective(s: &Settings) -> Result<bool> {
    let n = s.n.unwrap_or(3);
    let j = s.j();
    let gamma = s.gamma.unwrap_or(0.01 * j);
    let spec = GadgetSpec::new(n, j).with_eta(s.eta.unwrap_or(0.0)).with_gammas(gamma, gamma);
    spec.validate()?;
    let tol = s.tol.unwrap_or(1e-12);
    let numeric = second_order_numeric(&spec)?;
    let f = fluctuation_table(&spec)?;
    let closed = closed_form_effective(&spec, &f)?;
    let dev = compare_effective(&numeric, &closed)?;
    let vanish_tol = 1e-14;
    let ok = dev.hop <= tol
        && dev.same_weight <= tol
        && dev.diagonal <= tol
        && dev.zero < vanish_tol
        && dev.far < vanish_tol;
    println!("hop_amp {:.6e}  same_weight_amp {:.6e}", closed.hop_amp, closed.same_weight_amp);
    println!(
        "deviation: diagonal {:.3e}  hop {:.3e}  same_weight {:.3e}  zero {:.3e}  far {:.3e}",
        dev.diagonal, dev.hop, dev.same_weight, dev.zero, dev.far
    );
    let dir = s.out_dir()?;
    write_json(
        &dir.join(format!("effective_n{n}.json")),
        &serde_json::json!({
            "spec": spec,
            "hop_amp": closed.hop_amp,
            "same_weight_amp": closed.same_weight_amp,
            "fluctuation": f.values,
            "numeric": numeric,
            "deviation": dev,
            "tolerance": tol,
            "vanishing_tolerance": vanish_tol,
            "ok": ok,
        }),
    )?;
    let mut bin = Vec::new();
    numeric.write_dense(&mut bin)?;
    write_atomic(&dir.join(format!("effective_n{n}.bin")), &bin)?;
    Ok(ok)
}

const NORM_DRIFT_TOL: f64 = 1e-10;

fn cmd_walk(s: &Settings) -> Result<bool> {
    let n = s.n.unwrap_or(6);
    let samples = s.samples.unwrap_or(DEFAULT_SAMPLES);
    let marker = s.marker(n)?;
    let ratios = s.ratios();
    let runs: Vec<_> = ratios
        .par_iter()
        .map(|&r| run_encoded(n, r, samples, marker).map(|run| (r, run)))
        .collect::<hypergadget::Result<_>>()?;
    let mut rows: Vec<CurveRow> = Vec::with_capacity(samples * (ratios.len() + 1));
    let mut ok = true;
    for (r, run) in &runs {
        info!(
            "n={n} J/eta={r}: gap {:.6e}, peak {:.6} at t·Δ/π = {:.4}, drift {:.2e}",
            run.result.gap,
            run.result.peak_prob,
            run.result.peak_time * run.result.gap / PI,
            run.result.norm_drift
        );
        ok &= run.result.norm_drift < NORM_DRIFT_TOL;
        rows.extend(curve_rows(n, *r, &run.result));
    }
    if s.reference {
        let reference = reference_for(n, ratios[0], samples, marker)?;
        rows.extend(curve_rows(n, f64::INFINITY, &reference));
    }
    let path = s.out_file("curve.csv")?;
    write_curve_csv(&path, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(ok)
}

fn same_cell(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12 * a.1.abs().max(1.0)
}

fn cmd_sweep(s: &Settings) -> Result<bool> {
    let ns = match (s.n, &s.ns) {
        (Some(n), _) => vec![n],
        (None, Some(ns)) => ns.clone(),
        (None, None) => (2..=6).collect(),
    };
    let ratios = s.ratios();
    let marker = match s.mark_weight {
        Some(_) if ns.len() > 1 => bail!("--mark-weight needs a single --n in a sweep"),
        _ => s.marker(ns[0])?,
    };
    let path = s.out_file("sweep.csv")?;
    let errors_path = path.with_extension("errors.csv");
    let mut existing: Vec<SweepRow> = if path.exists() { read_sweep_csv(&path)? } else { Vec::new() };
    let done: Vec<(usize, f64)> = existing.iter().map(|r| (r.n, r.j_over_eta)).collect();
    let skip = |n: usize, r: f64| done.iter().any(|&c| same_cell(c, (n, r)));
    let pending = ns
        .iter()
        .flat_map(|&n| ratios.iter().map(move |&r| (n, r)))
        .filter(|&(n, r)| !skip(n, r))
        .count();
    info!("{} cells requested, {pending} to compute", ns.len() * ratios.len());
    if pending == 0 && path.exists() {
        println!("{} is complete", path.display());
        return Ok(!errors_path.exists());
    }
    let outcome = sweep_peak(&ns, &ratios, marker, &skip)?;
    existing.extend(outcome.rows);
    sort_sweep_rows(&mut existing);
    write_sweep_csv(&path, &existing)?;
    if outcome.errors.is_empty() {
        if errors_path.exists() {
            fs::remove_file(&errors_path)?;
        }
    } else {
        for e in &outcome.errors {
            eprintln!("n={} J/eta={}: {}", e.n, e.j_over_eta, e.error);
        }
        write_sweep_errors_csv(&errors_path, &outcome.errors)?;
    }
    println!("wrote {} rows to {}", existing.len(), path.display());
    Ok(outcome.errors.is_empty())
}

#[derive(Serialize)]
struct SymSummary {
    n: usize,
    gamma: f64,
    marked_sector: usize,
    gap: f64,
    peak_prob: f64,
    peak_time: f64,
    norm_drift: f64,
}

fn cmd_sym(s: &Settings) -> Result<bool> {
    let n = s.n.unwrap_or(20);
    let gamma = s.gamma.unwrap_or_else(|| critical_search_gamma(n));
    let potential = match (&s.potential_csv, &s.potential) {
        (Some(p), _) => PotentialFamily::from_csv(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        (None, Some(p)) => p.clone(),
        (None, None) => PotentialFamily::SearchSector {
            k: s.mark_weight.unwrap_or(n),
            strength: -1.0,
        },
    };
    let table = potential.table(n)?;
    let marked = match s.mark_weight {
        Some(k) => k,
        None => (0..=n).min_by(|&a, &b| table[a].total_cmp(&table[b])).expect("n + 1 sectors"),
    };
    let op = build_symmetric_walk(n, gamma, &potential)?;
    let gap = op.gap()?.gap;
    let t_max = s.t_max.unwrap_or(PI / gap);
    let samples = s.samples.unwrap_or(100);
    let times = linspace(0.0, t_max, samples);
    let states = op.evolve(&SymmetricState::uniform(n), &times)?;
    let mut csv = String::from("t,t_scaled,p_marked\n");
    let mut drift: f64 = 0.0;
    let (mut peak_prob, mut peak_time) = (0.0, 0.0);
    for (t, st) in times.iter().zip(&states) {
        let p = st.probability(marked);
        drift = drift.max((st.norm() - 1.0).abs());
        if p > peak_prob {
            (peak_prob, peak_time) = (p, *t);
        }
        csv.push_str(&format!("{t},{},{p}\n", t * gap / PI));
    }
    let path = s.out_file("sym.csv")?;
    write_atomic(&path, csv.as_bytes())?;
    let summary = SymSummary {
        n,
        gamma,
        marked_sector: marked,
        gap,
        peak_prob,
        peak_time,
        norm_drift: drift,
    };
    write_json(&path.with_extension("json"), &summary)?;
    println!("gap {gap:.6e}  peak {peak_prob:.6} at t = {peak_time:.4}  drift {drift:.2e}");
    Ok(drift < NORM_DRIFT_TOL)
}

/// Dense verification is automatic up to this many qubits.
const AUTO_VERIFY_QUBITS: usize = 4;
/// Round-off allowance on top of the Trotter bound.
const VERIFY_SLACK: f64 = 1e-10;

fn cmd_compile(s: &Settings) -> Result<bool> {
    let n = s.n.unwrap_or(2);
    let j = s.j();
    let gamma = s.gamma.unwrap_or(0.1 * j);
    let dt = s.dt.unwrap_or(0.05);
    let steps = s.steps.unwrap_or(20);
    let spec = GadgetSpec::new(n, j).with_eta(s.eta.unwrap_or(0.0)).with_gammas(gamma, gamma);
    spec.validate()?;
    let h = assemble_total(&spec)?;
    let schedule = trotterize(&h, dt, steps)?;
    let nq = schedule.n_qubits;
    let verify = s.verify.unwrap_or(Verify::Auto);
    let dense = match verify {
        Verify::Off => false,
        Verify::On => true,
        Verify::Auto => nq <= AUTO_VERIFY_QUBITS,
    };
    let mut report = serde_json::Map::new();
    let mut ok = true;
    let t = dt * steps as f64;
    if dense {
        let exact = exact_unitary(&h.build_dense()?, t)?;
        let approx = schedule.unitary_with_phase()?;
        let err = spectral_distance(&exact, &approx)?;
        let bound = trotter_bound(&h, dt, steps)?;
        let pass = err <= bound + VERIFY_SLACK;
        ok &= pass;
        println!("unitary error {err:.3e} (spectral), bound {bound:.3e}");
        report.insert("spectral_error".into(), err.into());
        report.insert("trace_error".into(), trace_norm_distance(&exact, &approx)?.into());
        report.insert("bound".into(), bound.into());
        report.insert("dense_ok".into(), pass.into());
    }
    let probes = if verify == Verify::Off { 0 } else { s.probes.unwrap_or(2) };
    if probes > 0 {
        let seed = s.seed.unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = MatrixFreeOperator::new(&h);
        let bound = trotter_bound_matrix_free(&h, dt, steps);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let mut psi: Vec<C64> = (0..h.dim())
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|a| *a /= norm);
            let exact = evolve(&op, &psi, &[t], Method::Auto)?.remove(0);
            schedule.apply_to(&mut psi)?;
            let err = exact.iter().zip(&psi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(err);
        }
        let pass = worst <= bound + VERIFY_SLACK;
        ok &= pass;
        println!("probe error {worst:.3e} over {probes} state(s), bound {bound:.3e}");
        report.insert("probe_seed".into(), seed.into());
        report.insert("probe_count".into(), probes.into());
        report.insert("probe_error".into(), worst.into());
        report.insert("probe_bound".into(), bound.into());
        report.insert("probe_ok".into(), pass.into());
    }
    report.insert("ok".into(), ok.into());
    println!("{} gates over {steps} steps", schedule.ops.len());
    let dir = s.out_dir()?;
    write_json(
        &dir.join(format!("schedule_n{n}.json")),
        &serde_json::json!({
            "spec": spec,
            "dt": dt,
            "steps": steps,
            "schedule": schedule,
            "verification": report,
        }),
    )?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    let settings = cli.settings.merged()?;
    if let Some(t) = settings.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.command {
        Command::Gadget => cmd_gadget(&settings),
        Command::Effective => cmd_effective(&settings),
        Command::Walk => cmd_walk(&settings),
        Command::Sweep => cmd_sweep(&settings),
        Command::Sym => cmd_sym(&settings),
        Command::Compile => cmd_compile(&settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
