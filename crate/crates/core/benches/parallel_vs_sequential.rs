use std::f64::consts::FRAC_PI_2;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fci_core::experiment::{preset, run_scenario_with};
use fci_core::lattice::{build_hhbh_with, FockBasis, LatticeGeometry, PotentialField};
use fci_core::lindblad::{build_composite, run_trajectories, uniform_grid, Drift, InfiniteTemperature, TrajectoryOptions};
use fci_core::linalg::C64;
use fci_core::rates::rate_matrix_with;
use fci_core::reservoir::{calibrate_drive, resolve_all, CavitySpec};
use fci_core::spectra::{full_spectrum, transition_table_with};
use fci_core::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn fig1a_cavities() -> Vec<CavitySpec> {
    [(1, 1.9, 0.4, 0.04, 0.13), (5, 1.85, 0.5, 0.05, 0.17), (15, 1.43, 1.0, 0.1, 0.4), (4, 1.9, 0.5, 0.05, 0.15)]
        .iter()
        .map(|&(site, d, pump, kappa, detuning)| CavitySpec { site, g: 0.8, delta: d * 20.0, pump, kappa, detuning })
        .collect()
}

fn bench_operator(c: &mut Criterion) {
    let geom = LatticeGeometry::square(6, FRAC_PI_2).unwrap();
    let basis = FockBasis::new(36, 3).unwrap();
    let pot = PotentialField::zeros(36);
    let mut group = c.benchmark_group("hhbh_build_l6_n3");
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| build_hhbh_with(&geom, 0.55, &basis, &pot, mode).unwrap()));
    }
    group.finish();
}

fn bench_rates(c: &mut Criterion) {
    let geom = LatticeGeometry::square(4, FRAC_PI_2).unwrap();
    let basis = FockBasis::new(16, 2).unwrap();
    let h = build_hhbh_with(&geom, 0.55, &basis, &PotentialField::zeros(16), Parallelism::Sequential).unwrap();
    let spec = full_spectrum(&h).unwrap();
    let cavities = resolve_all(&fig1a_cavities(), &calibrate_drive(FRAC_PI_2, 20.0).unwrap()).unwrap();
    let table = transition_table_with(&spec, &basis, &[1, 4, 5, 15], Parallelism::Sequential).unwrap();
    let mut group = c.benchmark_group("rate_matrix_fig1a");
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| rate_matrix_with(&spec, &table, &cavities, mode).unwrap()));
    }
    group.finish();
}

fn bench_trajectories(c: &mut Criterion) {
    let geom = LatticeGeometry::square(4, FRAC_PI_2).unwrap();
    let basis = FockBasis::new(16, 2).unwrap();
    let h = build_hhbh_with(&geom, 0.55, &basis, &PotentialField::zeros(16), Parallelism::Sequential).unwrap();
    let cavities = resolve_all(&fig1a_cavities(), &calibrate_drive(FRAC_PI_2, 20.0).unwrap()).unwrap();
    let (heff, jumps) = build_composite(&h, &basis, &cavities, &[2; 4]).unwrap();

    let x = vec![C64::new(1.0, 0.5); heff.dim()];
    let mut y = vec![C64::new(0.0, 0.0); heff.dim()];
    let mut group = c.benchmark_group("composite_apply_fig1a");
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| heff.apply_with(&x, &mut y, Drift::NonHermitian, mode)));
    }
    group.finish();

    let sampler = InfiniteTemperature::new(&basis);
    let mut group = c.benchmark_group("trajectory_batch_fig1a");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut opts = TrajectoryOptions::new(20.0, 8, 7);
        opts.times = uniform_grid(20.0, 5);
        opts.exec = mode;
        group.bench_with_input(BenchmarkId::new(name, 8), &opts, |b, opts| {
            b.iter(|| run_trajectories(&heff, &jumps, &sampler, opts).unwrap())
        });
    }
    group.finish();
}

fn bench_scan(c: &mut Criterion) {
    let mut cfg = preset("fig1c").unwrap();
    cfg.run.grid = 20;
    let mut group = c.benchmark_group("flux_scan_fig1c");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| run_scenario_with(&cfg, mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_operator, bench_rates, bench_trajectories, bench_scan);
criterion_main!(benches);
