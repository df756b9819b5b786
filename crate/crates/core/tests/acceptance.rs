//! Acceptance run: one pass/fail line per criterion.
//!
//! `cargo test --test acceptance -- 3 6` runs a subset. The trajectory check
//! runs its reduced form (t = 500 hbar/J) unless `FCI_ACCEPTANCE_FULL=1`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::process::ExitCode;
use std::time::Instant;

use fci_core::experiment::{preset, run_scenario, Quantity, RunReport, Solver};
use fci_core::lattice::{
    build_hhbh, gauge_transform, number_operator, plaquette_fluxes, wrap_angle, FockBasis, LatticeGeometry,
    PotentialField,
};
use fci_core::lindblad::{
    build_composite, direct_lindblad, pure_density, reduced_lattice, run_trajectories, EigenMixture, Probe,
    TrajectoryOptions,
};
use fci_core::linalg::C64;
use fci_core::observables::{streda_slope, SlopeMethod};
use fci_core::rates::{evolve_on_grid, evolve_populations, rate_matrix, PopulationVector};
use fci_core::reservoir::{calibrate_drive, chi_coupling, effective_hoppings, Cavity};
use fci_core::spectra::{full_spectrum, transition_table, Spectrum, TransitionTable};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail; the README lists the reasons.
const KNOWN_RED: &[u32] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, fci_core::Error>;

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [(u32, &str, Check); 9] = [
        (1, "spectral anchor", spectral_anchor),
        (2, "Floquet calibration", floquet_calibration),
        (3, "stabilization, rate equation", stabilization_rates),
        (4, "stabilization, trajectories", stabilization_trajectories),
        (5, "fast protocols", fast_protocols),
        (6, "Hall response", hall_response),
        (7, "three-particle pinning", pinning),
        (8, "oracle equivalence", oracle_equivalence),
        (9, "invariant suites", invariants),
    ];
    let mut unexpected = 0;
    for (id, name, check) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_RED.contains(&id);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id} {tag:<12} {name} [{:.1}s]: {detail}", start.elapsed().as_secs_f64());
        if !pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn l4_spectrum(phi: f64) -> (LatticeGeometry, FockBasis, Spectrum) {
    let g = LatticeGeometry::square(4, phi).unwrap();
    let b = FockBasis::new(16, 2).unwrap();
    let h = build_hhbh(&g, 0.55, &b, &PotentialField::zeros(16)).unwrap();
    let s = full_spectrum(&h).unwrap();
    (g, b, s)
}

fn spectral_anchor() -> Result<Outcome, fci_core::Error> {
    let (_, _, s) = l4_spectrum(FRAC_PI_2);
    let e = s.values();
    let want = [0.125, 0.161, 0.273];
    let got: Vec<f64> = (1..=3).map(|i| e[i] - e[0]).collect();
    let pass = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.1 * w);
    Ok(Outcome { pass, detail: format!("gaps {:.4}, {:.4}, {:.4} J (want 0.125, 0.161, 0.273 +-10%)", got[0], got[1], got[2]) })
}

fn floquet_calibration() -> Result<Outcome, fci_core::Error> {
    let g = LatticeGeometry::square(4, FRAC_PI_2)?;
    let drive = calibrate_drive(FRAC_PI_2, 20.0)?;
    let hops = effective_hoppings(&drive, &g, 1.0)?;
    let worst_mag = hops.iter().map(|(_, t)| (t.norm() - 0.55).abs()).fold(0.0, f64::max);
    let map: HashMap<(usize, usize), C64> =
        hops.iter().flat_map(|&(b, t)| [((b.from, b.to), t), ((b.to, b.from), t.conj())]).collect();
    let fluxes = plaquette_fluxes(&g, |a, b| map[&(a, b)]);
    let worst_flux = fluxes.iter().map(|f| wrap_angle(f - FRAC_PI_2).abs()).fold(0.0, f64::max);
    Ok(Outcome {
        pass: worst_mag <= 0.01 && worst_flux <= 1e-6,
        detail: format!(
            "{} bonds, max ||t| - 0.55| = {worst_mag:.2e} J; {} plaquettes, max flux error {worst_flux:.1e}",
            hops.len(),
            fluxes.len()
        ),
    })
}

fn stabilization_rates() -> Result<Outcome, fci_core::Error> {
    let report = run_scenario(&preset("fig1a")?)?;
    let r = report.points[0].rates.as_ref().expect("rate solver ran");
    let i = r.series.index_of(4000.0).expect("checkpoint on grid");
    let f = r.series.fidelity[i].value;
    Ok(Outcome { pass: f >= 0.80, detail: format!("fidelity {f:.4} at 4000 hbar/J (want >= 0.80)") })
}

fn stabilization_trajectories() -> Result<Outcome, fci_core::Error> {
    let full = std::env::var("FCI_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut cfg = preset("fig1a")?;
    cfg.solver = Solver::Both;
    cfg.run.trajectories = 200;
    cfg.run.n_max = 2;
    if full {
        cfg.run.checkpoints = vec![800.0, 1600.0, 2400.0, 3200.0, 4000.0];
    } else {
        cfg.run.t_final = Some(500.0);
        cfg.run.checkpoints = vec![100.0, 200.0, 300.0, 400.0, 500.0];
        cfg.run.grid = 6;
    }
    cfg.validate()?;
    let report = run_scenario(&cfg)?;
    let p = &report.points[0];
    let (rates, traj) = (p.rates.as_ref().unwrap(), p.traj.as_ref().unwrap());
    let mut pass = true;
    let mut cells = Vec::new();
    for &t in &cfg.run.checkpoints {
        let a = rates.series.fidelity[rates.series.index_of(t).unwrap()].value;
        let b = traj.series.fidelity[traj.series.index_of(t).unwrap()];
        let tol = 0.05f64.max(3.0 * b.stderr);
        pass &= (a - b.value).abs() <= tol;
        cells.push(format!("t={t}: {a:.3} vs {:.3}+-{:.3}", b.value, b.stderr));
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "{} run, {} trajectories, rates vs trajectories {}; top photon level {:.1e}{}",
            if full { "full" } else { "reduced" },
            traj.n_traj,
            cells.join(", "),
            traj.max_top_population,
            if traj.truncation_ok { "" } else { " (truncation flagged)" }
        ),
    })
}

/// Largest fidelity reached on the grid up to `t`.
fn reached_by(report: &RunReport, t: f64) -> f64 {
    let s = &report.points[0].rates.as_ref().unwrap().series;
    s.times.iter().zip(&s.fidelity).filter(|(x, _)| **x <= t + 1e-9).map(|(_, f)| f.value).fold(0.0, f64::max)
}

fn fast_protocols() -> Result<Outcome, fci_core::Error> {
    let four = reached_by(&run_scenario(&preset("fig1b")?)?, 800.0);
    let sixteen = reached_by(&run_scenario(&preset("fig1b-sym")?)?, 200.0);
    Ok(Outcome {
        pass: four >= 0.85 && sixteen >= 0.85,
        detail: format!("4 cavities {four:.4} by 800 hbar/J, 16 cavities {sixteen:.4} by 200 hbar/J (want >= 0.85)"),
    })
}

fn hall_response() -> Result<Outcome, fci_core::Error> {
    let report = run_scenario(&preset("fig1c")?)?;
    let slope = |q| -> Result<f64, fci_core::Error> { Ok(streda_slope(&report.flux_scan(q)?, SlopeMethod::LeastSquares)?.slope) };
    let (gs, ss, base) = (slope(Quantity::Ground)?, slope(Quantity::RatesSteady)?, slope(Quantity::Baseline)?);
    Ok(Outcome {
        pass: (gs - 0.6).abs() <= 0.05 && (ss - 0.51).abs() <= 0.1 && base.abs() <= 0.02,
        detail: format!(
            "slopes ground {gs:.4} (0.6+-0.05), steady state {ss:.4} (0.51+-0.1), infinite temperature {base:.4} (0+-0.02)"
        ),
    })
}

fn pinning() -> Result<Outcome, fci_core::Error> {
    let report = run_scenario(&preset("fig2a")?)?;
    let mut low = Vec::new();
    for p in &report.points {
        let r = p.rates.as_ref().unwrap();
        let f = r.series.fidelity[r.series.index_of(3000.0).unwrap()].value;
        if f < 0.70 {
            low.push(format!("{}:{f:.2}", p.pin));
        }
    }
    let worst_steady =
        report.points.iter().map(|p| p.rates.as_ref().unwrap().steady.fidelity.value).fold(1.0, f64::min);
    let dq = report.charge_response(Quantity::RatesSteady)?;
    let plateau = dq.iter().filter(|(v, _)| *v <= 0.3 + 1e-9).map(|(_, q)| q.value.abs()).fold(0.0, f64::max);
    let before = dq.iter().filter(|(v, _)| *v <= 0.3 + 1e-9).next_back().unwrap().1.value;
    let after = dq.iter().find(|(v, _)| *v > 0.3 + 1e-9).unwrap().1.value;
    let step = after - before;
    let gs_step = {
        let g = report.charge_response(Quantity::Ground)?;
        g.iter().find(|(v, _)| *v > 0.3 + 1e-9).unwrap().1.value - g.iter().filter(|(v, _)| *v <= 0.3 + 1e-9).next_back().unwrap().1.value
    };
    let fid_ok = low.is_empty();
    Ok(Outcome {
        pass: fid_ok && plateau < 0.1 && (step - 0.5).abs() <= 0.15,
        detail: format!(
            "fidelity at 3000 hbar/J below 0.70 at V = [{}] (steady-state minimum {worst_steady:.3}); \
             plateau max |dQ| {plateau:.3} (< 0.1); step {step:.3} (0.5+-0.15, exact ground state {gs_step:.3})",
            low.join(" ")
        ),
    })
}

fn oracle_equivalence() -> Result<Outcome, fci_core::Error> {
    let geom = LatticeGeometry::rectangular(1, 2, 0.0)?;
    let basis = FockBasis::new(2, 1)?;
    let lat = build_hhbh(&geom, 0.5, &basis, &PotentialField::zeros(2))?;
    let spec = full_spectrum(&lat)?;
    // kappa far above chi |alpha M| and far below the gap of 1 J, drive resonant with the gap
    let chi = 0.005;
    let cav = Cavity::new(0, chi, C64::new(1.0, 0.0), 0.1, 1.0)?;
    let (h, jumps) = build_composite(&lat, &basis, std::slice::from_ref(&cav), &[3])?;
    let tau = 1.0 / (10.0 * chi * chi);
    let times: Vec<f64> = (1..=5).map(|i| 0.2 * tau * i as f64).collect();

    let psi0 = h.space().embed_vacuum(spec.vector(1));
    let direct = direct_lindblad(&h, &jumps, &pure_density(&psi0), &times)?;
    let table = transition_table(&spec, &basis, &[0])?;
    let rm = rate_matrix(&spec, &table, &[cav])?;
    let rates = evolve_on_grid(&rm, &PopulationVector::new(vec![0.0, 1.0])?, &times)?;
    let mut opts = TrajectoryOptions::new(times[4], 16_000, 11);
    opts.times = times.clone();
    opts.probes = (0..2)
        .map(|i| Probe::Projector { name: format!("p{i}"), vectors: vec![spec.vector(i).to_vec()] })
        .collect();
    let ens = run_trajectories(&h, &jumps, &EigenMixture::new(&spec, &[0.0, 1.0])?, &opts)?;

    let mut worst = [0.0f64; 3];
    for (k, _) in times.iter().enumerate() {
        let rho = reduced_lattice(&direct.states[k], h.space());
        for eta in 0..2 {
            let v = DVector::from_column_slice(spec.vector(eta));
            let d = (v.adjoint() * &rho * &v)[(0, 0)].re;
            let r = rates[k].as_slice()[eta];
            let t = ens.mean[eta][k];
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
            worst[0] = worst[0].max(rel(t, d));
            worst[1] = worst[1].max(rel(t, r));
            worst[2] = worst[2].max(rel(d, r));
        }
    }
    Ok(Outcome {
        pass: worst.iter().all(|w| *w <= 0.05),
        detail: format!(
            "max relative deviation traj/direct {:.3}, traj/rates {:.3}, direct/rates {:.3} (want <= 0.05)",
            worst[0], worst[1], worst[2]
        ),
    })
}

fn invariants() -> Result<Outcome, fci_core::Error> {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    let mut herm = 0.0f64;
    let mut comm = 0.0f64;
    let mut gauge = 0.0f64;
    for (l, n, phi) in [(3, 1, 0.3), (3, 2, FRAC_PI_2), (4, 2, FRAC_PI_2), (4, 3, 2.0)] {
        let g = LatticeGeometry::square(l, phi)?;
        let b = FockBasis::new(l * l, n)?;
        let mut pot = PotentialField::zeros(l * l);
        pot.set(0, -0.3)?;
        let h = build_hhbh(&g, 0.55, &b, &pot)?;
        herm = herm.max(h.matrix().hermiticity_residual());
        let mut total = number_operator(&b, 0)?.into_matrix();
        for j in 1..l * l {
            total = total.add(number_operator(&b, j)?.matrix());
        }
        let hn = h.matrix().mul(&total);
        let nh = total.mul(h.matrix());
        comm = comm.max(hn.max_abs_diff(&nh));
        let phases: Vec<f64> = (0..l * l).map(|j| (j as f64 * 1.7).sin() * PI).collect();
        let e0 = full_spectrum(&h)?;
        let e1 = full_spectrum(&gauge_transform(&h, &phases, &b)?)?;
        gauge = gauge.max(e0.values().iter().zip(e1.values()).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max));
    }
    check("hermiticity", herm < 1e-12);
    check("particle number", comm < 1e-12);
    check("gauge invariance", gauge < 1e-10);

    let (_, b, spec) = l4_spectrum(FRAC_PI_2);
    let drive = calibrate_drive(FRAC_PI_2, 20.0)?;
    let cfg = preset("fig1a")?;
    let specs = cfg.table[0].specs();
    let cavities = fci_core::reservoir::resolve_all(&specs, &drive)?;
    let table = transition_table(&spec, &b, &[1, 4, 5, 15])?;
    let rm = rate_matrix(&spec, &table, &cavities)?;
    let mut simplex = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let w: Vec<f64> = (0..spec.len()).map(|_| rng.random::<f64>()).collect();
        let p0 = PopulationVector::from_weights(w)?;
        for t in [1.0, 100.0, 5000.0] {
            let p = evolve_populations(&rm, &p0, t)?;
            let sum: f64 = p.as_slice().iter().sum();
            let min = p.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            simplex = simplex.max((sum - 1.0).abs()).max((-min).max(0.0));
        }
    }
    check("simplex preservation", simplex < 1e-12);

    // two-level system with a single cavity
    let two = Spectrum::from_parts(vec![0.0, 0.3], vec![vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)], vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]])?;
    let m = DMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), C64::new(0.5, 0.0), C64::new(0.5, 0.0), C64::new(0.5, 0.0)]);
    let tt = TransitionTable::from_matrices(vec![0], vec![m])?;
    let (chi, kappa) = (0.02, 0.05);
    let rate = |d: f64| -> Result<f64, fci_core::Error> {
        Ok(rate_matrix(&two, &tt, &[Cavity::new(0, chi, C64::new(1.0, 0.0), kappa, d)?])?.rate(0, 1))
    };
    let peak = rate(0.3)?;
    let half = rate(0.3 + kappa / 2.0)?;
    check("Lorentzian peak", (peak - 4.0 * chi * chi * 0.25 / kappa).abs() < 1e-15);
    check("Lorentzian half width", (peak / half - 2.0).abs() < 1e-12);

    let mut chi_dev = 0.0f64;
    for c in &specs {
        let a = chi_coupling(c.g, c.delta, &drive, 4)?;
        let z = chi_coupling(c.g, c.delta, &drive, 64)?;
        chi_dev = chi_dev.max((a - z).abs() / z.abs());
    }
    check("chi convergence", chi_dev < 1e-12);

    // trace preservation and truncation on a small driven composite
    let geom = LatticeGeometry::rectangular(1, 2, 0.0)?;
    let basis = FockBasis::new(2, 1)?;
    let lat = build_hhbh(&geom, 0.5, &basis, &PotentialField::zeros(2))?;
    let s2 = full_spectrum(&lat)?;
    let cav = Cavity::new(0, 0.05, C64::new(1.0, 0.0), 0.1, 1.0)?;
    let mut ground = Vec::new();
    let mut trace = 0.0f64;
    for n_max in [2, 3, 4] {
        let (h, jumps) = build_composite(&lat, &basis, std::slice::from_ref(&cav), &[n_max])?;
        let psi = h.space().embed_vacuum(s2.vector(1));
        let out = direct_lindblad(&h, &jumps, &pure_density(&psi), &[50.0, 200.0])?;
        let rho = out.states.last().unwrap();
        trace = trace.max((rho.trace() - C64::new(1.0, 0.0)).norm());
        let red = reduced_lattice(rho, h.space());
        let v = DVector::from_column_slice(s2.vector(0));
        ground.push((v.adjoint() * &red * &v)[(0, 0)].re);
    }
    check("trace preservation", trace < 1e-9);
    let trunc = (ground[1] - ground[2]).abs();
    check("cavity truncation", trunc < 1e-3);

    let pass = failed.is_empty();
    Ok(Outcome {
        pass,
        detail: format!(
            "hermiticity {herm:.1e}, [H, N] {comm:.1e}, gauge {gauge:.1e}, simplex {simplex:.1e}, Lorentzian ratio {:.6}, \
             chi cutoff {chi_dev:.1e}, trace {trace:.1e}, n_max 3 vs 4 {trunc:.1e}{}",
            peak / half,
            if pass { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    })
}
