//! Build, diagnose, solve and observe for every scan point of a scenario.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::{info, warn};

use super::config::{Initial, ScenarioConfig};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::{build_hhbh_with, FockBasis, LatticeGeometry, PotentialField, SparseHermitianOperator};
use crate::lindblad::{
    build_composite, run_trajectories, uniform_grid, EigenMixture, InfiniteTemperature, StateSampler,
    TrajectoryEnsemble, TrajectoryOptions,
};
use crate::observables::{
    bulk_charge, bulk_charge_response, bulk_density, ground_state_fidelity, observable_probes, BulkRegion, Estimate,
    FluxScanResult, LatticeState, ScanPoint,
};
use crate::rates::{evolve_on_grid, rate_matrix, steady_state, steady_state_from, symmetrize_cavities, PopulationVector};
use crate::reservoir::{calibrate_drive, regime_report, resolve_all, Cavity, DriveSpec, RegimeReport};
use crate::spectra::{full_spectrum, lowest_eigenpairs, transition_table, Spectrum, SpectrumCache, SpectrumKey};

/// Residual tolerance for partial spectra.
const LANCZOS_TOL: f64 = 1e-10;

/// Fidelity, bulk density and bulk charge of one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snapshot {
    pub fidelity: Estimate,
    pub bulk_density: Estimate,
    pub bulk_charge: Estimate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub times: Vec<f64>,
    pub fidelity: Vec<Estimate>,
    pub bulk_density: Vec<Estimate>,
    /// Mean photon number per cavity site in the displaced frame.
    pub photons: Vec<(usize, Vec<f64>)>,
}

impl Series {
    /// Grid index of time `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let scale = self.times.last().copied().unwrap_or(1.0).max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * scale)
    }
}

#[derive(Clone, Debug)]
pub struct RatesOutcome {
    pub series: Series,
    pub final_state: Snapshot,
    pub steady: Snapshot,
    pub steady_populations: PopulationVector,
    /// The rate equation has several stationary states.
    pub degenerate: bool,
    pub max_rate: f64,
    pub min_rate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrajOutcome {
    pub series: Series,
    pub final_state: Snapshot,
    pub n_traj: usize,
    pub jumps: u64,
    pub composite_dim: usize,
    pub max_top_population: f64,
    pub truncation_ok: bool,
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub phi_over_2pi: f64,
    /// Dip depth in J.
    pub pin: f64,
    pub lattice_dim: usize,
    pub eigenvalues: Vec<f64>,
    pub max_residual: f64,
    pub cavities: Vec<Cavity>,
    pub regime: RegimeReport,
    /// Ground multiplet.
    pub ground: Snapshot,
    /// Maximally mixed Fock sector.
    pub baseline: Snapshot,
    pub rates: Option<RatesOutcome>,
    pub traj: Option<TrajOutcome>,
}

/// Which state of a scan point to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Ground,
    Baseline,
    RatesFinal,
    RatesSteady,
    TrajFinal,
}

impl Quantity {
    pub const ALL: [Quantity; 5] =
        [Quantity::Ground, Quantity::Baseline, Quantity::RatesFinal, Quantity::RatesSteady, Quantity::TrajFinal];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::Ground => "ground",
            Quantity::Baseline => "baseline",
            Quantity::RatesFinal => "rates_final",
            Quantity::RatesSteady => "rates_steady",
            Quantity::TrajFinal => "traj_final",
        }
    }
}

impl PointResult {
    pub fn snapshot(&self, q: Quantity) -> Option<&Snapshot> {
        match q {
            Quantity::Ground => Some(&self.ground),
            Quantity::Baseline => Some(&self.baseline),
            Quantity::RatesFinal => self.rates.as_ref().map(|r| &r.final_state),
            Quantity::RatesSteady => self.rates.as_ref().map(|r| &r.steady),
            Quantity::TrajFinal => self.traj.as_ref().map(|t| &t.final_state),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub hash: String,
    pub points: Vec<PointResult>,
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn is_flux_scan(&self) -> bool {
        !self.config.lattice.phi_scan.is_empty()
    }

    pub fn is_pin_scan(&self) -> bool {
        !self.config.lattice.pin_scan.is_empty()
    }

    /// Scan coordinate of a point: `phi / 2pi` for flux scans, the dip depth otherwise.
    pub fn abscissa(&self, p: &PointResult) -> f64 {
        if self.is_flux_scan() {
            p.phi_over_2pi
        } else {
            p.pin
        }
    }

    /// Bulk density against flux.
    pub fn flux_scan(&self, q: Quantity) -> Result<FluxScanResult> {
        let points = self
            .points
            .iter()
            .map(|p| {
                let s = p.snapshot(q).ok_or_else(|| missing(q))?;
                Ok(ScanPoint { phi: TAU * p.phi_over_2pi, value: s.bulk_density.value, stderr: s.bulk_density.stderr })
            })
            .collect::<Result<Vec<_>>>()?;
        FluxScanResult::new(points)
    }

    /// Bulk charge change relative to the undimpled lattice, keyed by dip depth.
    pub fn charge_response(&self, q: Quantity) -> Result<Vec<(f64, Estimate)>> {
        let charges = self
            .points
            .iter()
            .map(|p| Ok((p.pin, p.snapshot(q).ok_or_else(|| missing(q))?.bulk_charge)))
            .collect::<Result<Vec<_>>>()?;
        bulk_charge_response(&charges)
    }
}

fn missing(q: Quantity) -> Error {
    Error::domain(format!("the run did not produce `{}`", q.label()))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    run_scenario_with(cfg, Parallelism::Auto)
}

/// Runs every scan point; points are independent and go to the worker pool.
pub fn run_scenario_with(cfg: &ScenarioConfig, exec: Parallelism) -> Result<RunReport> {
    cfg.validate()?;
    if let Some(reason) = &cfg.unsupported {
        return Err(Error::Config(format!("scenario {} is kept as data only: {reason}", cfg.scenario)));
    }
    let start = Instant::now();
    let hash = cfg.hash()?;
    let grid: Vec<(f64, f64)> = cfg
        .flux_points()
        .into_iter()
        .flat_map(|f| cfg.pin_points().into_iter().map(move |v| (f, v)))
        .collect();
    info!("scenario {} ({} points, hash {})", cfg.scenario, grid.len(), &hash[..12]);
    let points = exec.try_map(grid.len(), |i| {
        let (f, v) = grid[i];
        run_point(cfg, f, v, &hash, exec)
            .map_err(|e| e.context(format!("scenario {} at phi/2pi = {f}, V = {v}", cfg.scenario)))
    })?;
    Ok(RunReport { config: cfg.clone(), hash, points, wall_clock: start.elapsed() })
}

/// Uniform grid plus the checkpoints.
fn time_grid(cfg: &ScenarioConfig) -> Vec<f64> {
    let t_final = cfg.t_final();
    let mut times = uniform_grid(t_final, cfg.run.grid);
    times.extend(&cfg.run.checkpoints);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_final);
    times
}

fn spectrum(
    cfg: &ScenarioConfig,
    h: &SparseHermitianOperator,
    flux: f64,
    pot: &PotentialField,
) -> Result<Spectrum> {
    let k = cfg.run.eigenstates;
    let compute = || {
        if k == 0 || k >= h.dim() {
            full_spectrum(h)
        } else {
            lowest_eigenpairs(h, k, LANCZOS_TOL)
        }
    };
    match &cfg.run.cache {
        Some(dir) => {
            let key = SpectrumKey {
                l: cfg.size(),
                n: cfg.particles(),
                flux,
                j_eff: cfg.lattice.j_eff,
                potential: pot.values().to_vec(),
                k,
                tol: LANCZOS_TOL,
            };
            SpectrumCache::new(dir).get_or_compute(&key, compute)
        }
        None => compute(),
    }
}

fn initial_populations(initial: Initial, k: usize) -> Result<PopulationVector> {
    match initial {
        Initial::InfiniteTemperature => PopulationVector::uniform(k),
        Initial::Lowest(n) if n > k => {
            Err(Error::validation("run.initial", format!("lowest = {n} exceeds the {k} retained eigenstates")))
        }
        Initial::Lowest(n) => PopulationVector::lowest_uniform(k, n),
        Initial::Ground => PopulationVector::lowest_uniform(k, 1),
    }
}

fn sampler(initial: Initial, spec: &Spectrum, basis: &FockBasis) -> Result<Box<dyn StateSampler>> {
    Ok(match initial {
        Initial::InfiniteTemperature => Box::new(InfiniteTemperature::new(basis)),
        Initial::Lowest(n) => Box::new(EigenMixture::new(spec, &vec![1.0; n])?),
        Initial::Ground => Box::new(EigenMixture::new(spec, &[1.0])?),
    })
}

struct Observer<'a> {
    spec: &'a Spectrum,
    basis: &'a FockBasis,
    region: &'a BulkRegion,
}

impl Observer<'_> {
    fn snapshot(&self, state: LatticeState<'_>) -> Result<Snapshot> {
        Ok(Snapshot {
            fidelity: ground_state_fidelity(state, self.spec)?,
            bulk_density: bulk_density(state, self.spec, self.basis, self.region)?,
            bulk_charge: bulk_charge(state, self.spec, self.basis, self.region)?,
        })
    }
}

fn run_point(cfg: &ScenarioConfig, phi_frac: f64, pin: f64, hash: &str, exec: Parallelism) -> Result<PointResult> {
    let l = cfg.size();
    let flux = TAU * phi_frac;
    let geom = LatticeGeometry::square(l, flux)?;
    let basis = FockBasis::new(l * l, cfg.particles())?;
    let pot = if pin == 0.0 {
        PotentialField::zeros(l * l)
    } else {
        PotentialField::pinning_dip(&geom, pin)?
    };
    let h = build_hhbh_with(&geom, cfg.lattice.j_eff, &basis, &pot, exec)?;
    let spec = spectrum(cfg, &h, flux, &pot)?;
    let k = spec.len();

    let w = cfg.drive.hbar_omega;
    let drive = match cfg.drive.lambda_ratio {
        Some(r) => DriveSpec::new(w, r * w, flux)?,
        None => calibrate_drive(flux, w)?,
    };
    let mut specs = cfg.table_for(phi_frac, pin)?.specs();
    if cfg.run.symmetrize {
        specs = symmetrize_cavities(&specs, &geom)?;
    }
    let cavities = resolve_all(&specs, &drive)?;
    let mut sites: Vec<usize> = specs.iter().map(|c| c.site).collect();
    sites.sort_unstable();
    sites.dedup();
    let table = transition_table(&spec, &basis, &sites)?;
    let regime = regime_report(&specs, &drive, &spec, &table)?;
    if regime.has_violation() {
        warn!("{}: regime violation at phi/2pi = {phi_frac}, V = {pin}\n{regime}", cfg.scenario);
    }

    let region = BulkRegion::new(&geom, cfg.run.bulk.kind())?;
    let obs = Observer { spec: &spec, basis: &basis, region: &region };
    let ground = obs.snapshot(LatticeState::Populations(&PopulationVector::lowest_uniform(
        k,
        spec.ground_multiplicity(),
    )?))?;
    let counts = region.counts(&basis)?;
    let mean_count = counts.iter().sum::<f64>() / counts.len() as f64;
    let baseline = Snapshot {
        fidelity: Estimate::exact(spec.ground_multiplicity() as f64 / basis.dim() as f64),
        bulk_density: Estimate::exact(mean_count / region.len() as f64),
        bulk_charge: Estimate::exact(mean_count),
    };
    let times = time_grid(cfg);

    let rates = if cfg.solver.rates() {
        let rm = rate_matrix(&spec, &table, &cavities)?;
        let p0 = initial_populations(cfg.run.initial, k)?;
        let path = evolve_on_grid(&rm, &p0, &times)?;
        let mut fidelity = Vec::with_capacity(path.len());
        let mut bulk = Vec::with_capacity(path.len());
        for p in &path {
            let s = obs.snapshot(LatticeState::Populations(p))?;
            fidelity.push(s.fidelity);
            bulk.push(s.bulk_density);
        }
        let final_state = obs.snapshot(LatticeState::Populations(path.last().expect("grid is not empty")))?;
        let steady_populations = steady_state_from(&rm, &p0)?;
        let degenerate = steady_state(&rm)?.degenerate;
        if degenerate {
            warn!("{}: several stationary states at phi/2pi = {phi_frac}, V = {pin}", cfg.scenario);
        }
        Some(RatesOutcome {
            series: Series { times: times.clone(), fidelity, bulk_density: bulk, photons: Vec::new() },
            final_state,
            steady: obs.snapshot(LatticeState::Populations(&steady_populations))?,
            steady_populations,
            degenerate,
            max_rate: rm.max_rate(),
            min_rate: rm.min_nonzero_rate(),
        })
    } else {
        None
    };

    let traj = if cfg.solver.trajectories() {
        let n_max = vec![cfg.run.n_max; cavities.len()];
        let (heff, jumps) = build_composite(&h, &basis, &cavities, &n_max)?;
        let checkpoint = cfg.run.cache.as_ref().map(|dir| -> PathBuf {
            dir.join(format!("traj-{}-{phi_frac}-{pin}-{}.ckpt", &hash[..16], cfg.run.trajectories))
        });
        let opts = TrajectoryOptions {
            times: times.clone(),
            n_traj: cfg.run.trajectories,
            seed: cfg.run.seed,
            rtol: cfg.run.rtol,
            probes: observable_probes(&spec, &basis, &region)?,
            checkpoint,
            exec,
        };
        let ens = run_trajectories(&heff, &jumps, sampler(cfg.run.initial, &spec, &basis)?.as_ref(), &opts)?;
        if !ens.truncation_ok() {
            warn!(
                "{}: top photon level carries {:.2e} population; raise n_max",
                cfg.scenario,
                ens.max_top_population()
            );
        }
        Some(traj_outcome(&ens, &cavities, &obs, heff.dim())?)
    } else {
        None
    };

    Ok(PointResult {
        phi_over_2pi: phi_frac,
        pin,
        lattice_dim: basis.dim(),
        eigenvalues: spec.values().to_vec(),
        max_residual: spec.residuals().iter().copied().fold(0.0, f64::max),
        cavities,
        regime,
        ground,
        baseline,
        rates,
        traj,
    })
}

fn traj_outcome(ens: &TrajectoryEnsemble, cavities: &[Cavity], obs: &Observer<'_>, dim: usize) -> Result<TrajOutcome> {
    let n = ens.times.len();
    let mut fidelity = Vec::with_capacity(n);
    let mut bulk = Vec::with_capacity(n);
    for slot in 0..n {
        let s = obs.snapshot(LatticeState::Ensemble(ens, slot))?;
        fidelity.push(s.fidelity);
        bulk.push(s.bulk_density);
    }
    let photons = cavities
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let (mean, _) = ens
                .series(&format!("photons_{j}"))
                .ok_or_else(|| Error::domain(format!("ensemble lacks photons of cavity {j}")))?;
            Ok((c.site, mean.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajOutcome {
        series: Series { times: ens.times.clone(), fidelity, bulk_density: bulk, photons },
        final_state: obs.snapshot(LatticeState::Ensemble(ens, n - 1))?,
        n_traj: ens.n_traj,
        jumps: ens.jumps,
        composite_dim: dim,
        max_top_population: ens.max_top_population(),
        truncation_ok: ens.truncation_ok(),
    })
}
