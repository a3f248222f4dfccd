use hypergadget::compiler::{
    ising_to_qubo, qubo_to_ising, spectral_distance, zz_to_condphase, IsingModel, Qubo,
};
use hypergadget::gadget::{bias_sector_map, enumerate_manifold, GadgetSpec};
use hypergadget::propagate::{evolve, expectation, linspace, Method};
use hypergadget::spin_model::{
    logical_hamming_distance, IsingXZHamiltonian, MatrixFreeOperator, PauliTerm, QubitLayout, StateVector, C64,
};
use hypergadget::symmetric::{build_symmetric_walk, PotentialFamily};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn hamiltonian(n_data: usize, n_aux: usize, coeffs: &[(u8, usize, usize, f64)]) -> IsingXZHamiltonian {
    let layout = QubitLayout::new(n_data, n_aux).unwrap();
    let nq = layout.n_qubits();
    let terms = coeffs
        .iter()
        .map(|&(kind, a, b, c)| {
            let (a, b) = (a % nq, b % nq);
            match kind % 3 {
                0 => PauliTerm::z(a, c),
                1 if a != b => PauliTerm::zz(a, b, c),
                1 => PauliTerm::z(a, c),
                _ => PauliTerm::x(a, c),
            }
        })
        .collect();
    IsingXZHamiltonian::from_terms(layout, terms).unwrap()
}

fn term_strategy() -> impl Strategy<Value = Vec<(u8, usize, usize, f64)>> {
    prop::collection::vec((0u8..3, 0usize..8, 0usize..8, -2.0f64..2.0), 1..16)
}

fn random_state(dim: usize, re: &[f64], im: &[f64]) -> StateVector {
    let mut psi = StateVector::from_amplitudes(
        (0..dim).map(|i| C64::new(re[i % re.len()] + 0.01 * i as f64, im[i % im.len()])).collect(),
    );
    psi.normalize();
    psi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_is_symmetric_and_matches_apply(
        n_data in 1usize..=4,
        n_aux in 0usize..=3,
        terms in term_strategy(),
        re in prop::collection::vec(-1.0f64..1.0, 4),
        im in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let h = hamiltonian(n_data, n_aux, &terms);
        let m = h.build_dense().unwrap();
        prop_assert!((&m - m.transpose()).amax() <= 1e-12);
        let psi = random_state(h.dim(), &re, &im);
        let hpsi = h.apply(&psi).unwrap();
        for r in 0..h.dim() {
            let dense: C64 = (0..h.dim()).map(|c| psi.amps[c] * m[(r, c)]).sum();
            prop_assert!((dense - hpsi.amps[r]).norm() <= 1e-12);
        }
    }

    #[test]
    fn flips_stay_within_distance_one(
        n_data in 1usize..=3,
        n_aux in 0usize..=3,
        terms in term_strategy(),
        basis in 0usize..64,
    ) {
        let h = hamiltonian(n_data, n_aux, &terms);
        let i = basis % h.dim();
        let out = h.apply(&StateVector::basis(h.dim(), i).unwrap()).unwrap();
        for (j, a) in out.amps.iter().enumerate() {
            if a.norm() > 0.0 {
                prop_assert!((i ^ j).count_ones() <= 1);
            }
        }
    }

    #[test]
    fn labels_round_trip(n_data in 1usize..=6, n_aux in 0usize..=6, raw in any::<usize>()) {
        let layout = QubitLayout::new(n_data, n_aux).unwrap();
        let i = raw % layout.dim();
        prop_assert_eq!(layout.parse_label(&layout.label(i)).unwrap(), i);
    }

    #[test]
    fn hamming_is_a_metric_on_data(n_aux in 0usize..=3, a in 0usize..4096, b in 0usize..4096, c in 0usize..4096) {
        let layout = QubitLayout::new(6, n_aux).unwrap();
        let (a, b, c) = (a % layout.dim(), b % layout.dim(), c % layout.dim());
        let d = |x, y| logical_hamming_distance(x, y, &layout).unwrap();
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert!(d(a, c) <= d(a, b) + d(b, c));
        prop_assert_eq!(d(a, a), 0);
        // Auxiliary bits are invisible to the metric.
        prop_assert_eq!(d(a, layout.compose(layout.data_bits(a), layout.aux_bits(b))), 0);
    }

    #[test]
    fn qubo_ising_round_trip(
        n in 1usize..=6,
        quad in prop::collection::vec(-1.0f64..1.0, 36),
        linear in prop::collection::vec(-1.0f64..1.0, 6),
        constant in -1.0f64..1.0,
    ) {
        let q = DMatrix::from_fn(n, n, |i, j| if i < j { quad[i * 6 + j] } else { 0.0 });
        let mut qubo = Qubo::from_matrix(&q, &linear[..n]).unwrap();
        qubo.constant = constant;
        let ising = qubo_to_ising(&qubo);
        let back = ising_to_qubo(&ising);
        prop_assert!((&back.quad - &qubo.quad).amax() <= 1e-14);
        for (x, y) in back.linear.iter().zip(&qubo.linear) {
            prop_assert!((x - y).abs() <= 1e-14);
        }
        prop_assert!((back.constant - qubo.constant).abs() <= 1e-14);
        for x in 0..1usize << n {
            prop_assert!((qubo.energy(x) - ising.energy(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn ising_qubo_round_trip(
        n in 1usize..=5,
        couplings in prop::collection::vec(-1.0f64..1.0, 25),
        fields in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let m = IsingModel {
            couplings: DMatrix::from_fn(n, n, |i, j| if i < j { couplings[i * 5 + j] } else { 0.0 }),
            fields: fields[..n].to_vec(),
            offset: 0.25,
        };
        let back = qubo_to_ising(&ising_to_qubo(&m));
        prop_assert!((&back.couplings - &m.couplings).amax() <= 1e-14);
        prop_assert!((back.offset - m.offset).abs() <= 1e-14);
        for (x, y) in back.fields.iter().zip(&m.fields) {
            prop_assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn zz_schedule_matches_target(phi in -10.0f64..10.0, i in 0usize..3, j in 0usize..3) {
        prop_assume!(i != j);
        let s = zz_to_condphase(phi, i, j, 3).unwrap();
        let target = DMatrix::from_fn(8, 8, |r, c| {
            if r != c {
                C64::new(0.0, 0.0)
            } else {
                let z = |q: usize| if (r >> q) & 1 == 0 { 1.0 } else { -1.0 };
                C64::from_polar(1.0, -phi * z(i) * z(j))
            }
        });
        prop_assert!(spectral_distance(&s.unitary_with_phase().unwrap(), &target).unwrap() <= 1e-12);
    }

    #[test]
    fn palindromic_potential_gives_palindromic_walk(
        n in 1usize..=40,
        half in prop::collection::vec(-3.0f64..3.0, 21),
        gamma in 0.01f64..2.0,
    ) {
        let values: Vec<f64> = (0..=n).map(|k| half[k.min(n - k)]).collect();
        let op = build_symmetric_walk(n, gamma, &PotentialFamily::Table { values }).unwrap();
        for k in 0..n {
            prop_assert_eq!(op.hop[k], op.hop[n - 1 - k]);
        }
        for k in 0..=n {
            prop_assert_eq!(op.diag[k], op.diag[n - k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bias_shifts_match_sector_map(
        n in 2usize..=4,
        b in prop::collection::vec(-1.0f64..1.0, 5),
        eta in 0.001f64..0.05,
    ) {
        let b = b[..=n].to_vec();
        let map = bias_sector_map(n).unwrap();
        let base = enumerate_manifold(&GadgetSpec::new(n, 1.0)).unwrap();
        let biased = enumerate_manifold(&GadgetSpec::new(n, 1.0).with_eta(eta).with_bias(b.clone())).unwrap();
        let predicted = |w: usize| -> f64 {
            map.iter()
                .map(|s| b[s.sector] * (s.global + if s.weight == w { s.shift } else { 0.0 }))
                .sum::<f64>()
                * eta
        };
        for (e0, e1) in base.entries.iter().zip(&biased.entries) {
            prop_assert!((e1.energy - e0.energy - predicted(e0.weight)).abs() <= 1e-9);
        }
    }

    #[test]
    fn propagation_is_unitary_and_conserves_energy(
        terms in term_strategy(),
        re in prop::collection::vec(-1.0f64..1.0, 4),
        im in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let h = hamiltonian(3, 3, &terms);
        let op = MatrixFreeOperator::new(&h);
        let psi = random_state(h.dim(), &re, &im);
        let times = linspace(0.0, 5.0, 11);
        let e0 = expectation(&op, &psi.amps);
        let dense = evolve(&op, &psi.amps, &times, Method::Dense).unwrap();
        let krylov = evolve(&op, &psi.amps, &times, Method::Krylov).unwrap();
        for (a, b) in dense.iter().zip(&krylov) {
            let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-10);
            let nk: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((nk - 1.0).abs() <= 1e-10);
            let dev = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            prop_assert!(dev <= 1e-8);
            let e = expectation(&op, a);
            prop_assert!((e - e0).abs() <= 1e-9 * e0.abs().max(1.0));
        }
    }
}

#[test]
fn hamming_metric_exhaustive_triples() {
    let layout = QubitLayout::new(3, 2).unwrap();
    let d = |x, y| logical_hamming_distance(x, y, &layout).unwrap();
    for a in 0..layout.dim() {
        for b in 0..layout.dim() {
            assert_eq!(d(a, b), d(b, a));
            assert_eq!(d(a, b) == 0, layout.data_bits(a) == layout.data_bits(b));
            for c in 0..layout.dim() {
                assert!(d(a, c) <= d(a, b) + d(b, c));
            }
        }
    }
}
