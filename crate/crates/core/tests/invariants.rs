use std::f64::consts::PI;

use approx::assert_relative_eq;
use fci_core::lattice::{build_hhbh, gauge_transform, number_operator, FockBasis, LatticeGeometry, PotentialField};
use fci_core::lindblad::{build_composite, run_trajectories, Drift, EigenMixture, Probe, TrajectoryOptions};
use fci_core::linalg::C64;
use fci_core::rates::{evolve_populations, steady_state, PopulationVector, RateMatrix};
use fci_core::reservoir::Cavity;
use fci_core::spectra::full_spectrum;
use fci_core::special::{bessel_j, bessel_j_upto};
use fci_core::Parallelism;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn lattice() -> impl Strategy<Value = (usize, usize, usize, f64, Vec<f64>)> {
    (2usize..=3, 2usize..=4, 1usize..=3, 0.0..2.0 * PI).prop_flat_map(|(r, c, n, phi)| {
        let n = n.min(r * c - 1);
        (Just(r), Just(c), Just(n), Just(phi), prop::collection::vec(-1.0..1.0f64, r * c))
    })
}

fn rates() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..7).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], n * n).prop_map(move |v| {
            let mut m = DMatrix::from_vec(n, n, v);
            m.fill_diagonal(0.0);
            m
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonian_is_hermitian_and_conserves_number((r, c, n, phi, v) in lattice()) {
        let g = LatticeGeometry::rectangular(r, c, phi).unwrap();
        let b = FockBasis::new(r * c, n).unwrap();
        let h = build_hhbh(&g, 0.55, &b, &PotentialField::from_values(v).unwrap()).unwrap();
        prop_assert!(h.matrix().hermiticity_residual() < 1e-12);
        let mut total = number_operator(&b, 0).unwrap().into_matrix();
        for j in 1..r * c {
            total = total.add(number_operator(&b, j).unwrap().matrix());
        }
        prop_assert!(h.matrix().mul(&total).max_abs_diff(&total.mul(h.matrix())) < 1e-12);
    }

    #[test]
    fn spectrum_is_gauge_invariant((r, c, n, phi, v) in lattice(), seed in 0u64..1000) {
        let g = LatticeGeometry::rectangular(r, c, phi).unwrap();
        let b = FockBasis::new(r * c, n).unwrap();
        let h = build_hhbh(&g, 0.55, &b, &PotentialField::from_values(v).unwrap()).unwrap();
        let phases: Vec<f64> = (0..r * c).map(|j| ((seed + 7 * j as u64) as f64 * 0.37).sin() * PI).collect();
        let a = full_spectrum(&h).unwrap();
        let t = full_spectrum(&gauge_transform(&h, &phases, &b).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(t.values()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn populations_stay_on_simplex(m in rates(), t in 0.0..200.0f64, w in prop::collection::vec(0.01..1.0f64, 7)) {
        let n = m.nrows();
        let rm = RateMatrix::from_rates(m).unwrap();
        let p0 = PopulationVector::from_weights(w[..n].to_vec()).unwrap();
        let p = evolve_populations(&rm, &p0, t).unwrap();
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|x| *x >= -1e-14));
    }

    #[test]
    fn steady_states_are_stationary(m in rates()) {
        let rm = RateMatrix::from_rates(m).unwrap();
        let ss = steady_state(&rm).unwrap();
        if let Some(p) = ss.unique() {
            let later = evolve_populations(&rm, p, 50.0).unwrap();
            prop_assert!(later.total_variation(p) < 1e-9);
        }
    }

    #[test]
    fn bessel_recurrence(x in 0.0..12.0f64) {
        let j = bessel_j_upto(12, x);
        for n in 1..10 {
            let lhs = j[n - 1] + j[n + 1];
            let rhs = 2.0 * n as f64 / x.max(1e-300) * j[n];
            if x > 1e-6 {
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
        prop_assert!((bessel_j(-3, x) + j[3]).abs() < 1e-14);
    }
}

fn small_composite(levels: &[usize]) -> (fci_core::lindblad::EffectiveHamiltonian, Vec<fci_core::lindblad::JumpOperator>) {
    let g = LatticeGeometry::rectangular(2, 2, 0.9).unwrap();
    let b = FockBasis::new(4, 2).unwrap();
    let h = build_hhbh(&g, 0.55, &b, &PotentialField::zeros(4)).unwrap();
    let cavities = [
        Cavity::new(0, 0.03, C64::new(0.7, 0.2), 0.05, 0.2).unwrap(),
        Cavity::new(3, 0.02, C64::new(0.0, -1.1), 0.08, 0.5).unwrap(),
    ];
    build_composite(&h, &b, &cavities, levels).unwrap()
}

#[test]
fn composite_apply_matches_assembled_matrix() {
    let (h, jumps) = small_composite(&[2, 3]);
    let x: Vec<C64> = (0..h.dim()).map(|i| C64::new((i as f64 * 0.3).cos(), (i as f64 * 0.7).sin())).collect();
    for drift in [Drift::Hermitian, Drift::NonHermitian] {
        let dense = h.to_csr(drift).apply(&x);
        for exec in [Parallelism::Sequential, Parallelism::Rayon] {
            let mut y = vec![C64::new(0.0, 0.0); h.dim()];
            h.apply_with(&x, &mut y, drift, exec);
            let err = y.iter().zip(&dense).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-13, "{drift:?} {exec:?}: {err}");
        }
    }
    for jump in &jumps {
        let mut y = vec![C64::new(0.0, 0.0); h.dim()];
        h.apply_jump(jump, &x, &mut y);
        let want = h.jump_csr(jump).apply(&x);
        let err = y.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }
}

#[test]
fn trajectories_do_not_depend_on_execution_policy() {
    let (h, jumps) = small_composite(&[2, 2]);
    let g = LatticeGeometry::rectangular(2, 2, 0.9).unwrap();
    let b = FockBasis::new(4, 2).unwrap();
    let spec = full_spectrum(&build_hhbh(&g, 0.55, &b, &PotentialField::zeros(4)).unwrap()).unwrap();
    let sampler = EigenMixture::new(&spec, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let run = |exec| {
        let mut opts = TrajectoryOptions::new(40.0, 6, 5);
        opts.times = vec![10.0, 40.0];
        opts.probes = vec![Probe::Projector { name: "gs".into(), vectors: vec![spec.vector(0).to_vec()] }];
        opts.exec = exec;
        run_trajectories(&h, &jumps, &sampler, &opts).unwrap()
    };
    let (a, b) = (run(Parallelism::Sequential), run(Parallelism::Rayon));
    for (x, y) in a.mean[0].iter().zip(&b.mean[0]) {
        assert_relative_eq!(*x, *y, epsilon = 1e-14);
    }
}
