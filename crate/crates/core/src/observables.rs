//! Fidelity, bulk density, Hall slope and bulk charge.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{FockBasis, LatticeGeometry};
use crate::lindblad::{Probe, TrajectoryEnsemble};
use crate::linalg::C64;
use crate::rates::PopulationVector;
use crate::spectra::Spectrum;

pub const FIDELITY: &str = "fidelity";
pub const BULK_DENSITY: &str = "bulk_density";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BulkKind {
    /// Everything but the outermost ring, `(L-2) x (L-2)`.
    Inner,
    /// `(L-1) x (L-1)` sites starting at the corner `(0, 0)`.
    Literal,
    Custom,
}

impl fmt::Display for BulkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BulkKind::Inner => "inner",
            BulkKind::Literal => "literal",
            BulkKind::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BulkRegion {
    kind: BulkKind,
    sites: Vec<usize>,
    num_sites: usize,
}

impl BulkRegion {
    pub fn new(geom: &LatticeGeometry, kind: BulkKind) -> Result<Self> {
        let (rows, cols) = (geom.rows(), geom.cols());
        let sites: Vec<usize> = match kind {
            BulkKind::Inner => (1..rows.saturating_sub(1))
                .flat_map(|m| (1..cols.saturating_sub(1)).map(move |n| (m, n)))
                .map(|(m, n)| geom.site(m, n))
                .collect(),
            BulkKind::Literal => (0..rows.saturating_sub(1))
                .flat_map(|m| (0..cols.saturating_sub(1)).map(move |n| (m, n)))
                .map(|(m, n)| geom.site(m, n))
                .collect(),
            BulkKind::Custom => return Err(Error::domain("use BulkRegion::custom for explicit site lists")),
        };
        if sites.is_empty() {
            return Err(Error::domain(format!("{kind} bulk region is empty on a {rows}x{cols} lattice")));
        }
        Ok(BulkRegion { kind, sites, num_sites: geom.num_sites() })
    }

    pub fn inner(geom: &LatticeGeometry) -> Result<Self> {
        Self::new(geom, BulkKind::Inner)
    }

    pub fn literal(geom: &LatticeGeometry) -> Result<Self> {
        Self::new(geom, BulkKind::Literal)
    }

    pub fn custom(geom: &LatticeGeometry, mut sites: Vec<usize>) -> Result<Self> {
        sites.sort_unstable();
        sites.dedup();
        if sites.is_empty() {
            return Err(Error::domain("bulk region is empty"));
        }
        if let Some(&s) = sites.iter().find(|&&s| s >= geom.num_sites()) {
            return Err(Error::domain(format!("bulk site {s} outside the lattice")));
        }
        Ok(BulkRegion { kind: BulkKind::Custom, sites, num_sites: geom.num_sites() })
    }

    pub fn kind(&self) -> BulkKind {
        self.kind
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    fn mask(&self) -> u64 {
        self.sites.iter().fold(0u64, |m, &s| m | (1 << s))
    }

    /// Occupied region sites of every basis configuration.
    pub fn counts(&self, basis: &FockBasis) -> Result<Vec<f64>> {
        if basis.sites() != self.num_sites {
            return Err(Error::DimensionMismatch { expected: self.num_sites, got: basis.sites() });
        }
        let mask = self.mask();
        Ok(basis.patterns().iter().map(|&p| (p & mask).count_ones() as f64).collect())
    }
}

/// Mean with its standard error (zero for exact states).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// A lattice state in one of the representations produced by the solvers.
#[derive(Clone, Copy, Debug)]
pub enum LatticeState<'a> {
    /// Eigenstate populations aligned with the spectrum.
    Populations(&'a PopulationVector),
    /// Reduced lattice density matrix in the Fock basis.
    Density(&'a DMatrix<C64>),
    /// Trajectory ensemble at a time index; needs the probes from [`observable_probes`].
    Ensemble(&'a TrajectoryEnsemble, usize),
}

fn ensemble_value(ens: &TrajectoryEnsemble, slot: usize, name: &str) -> Result<Estimate> {
    let (mean, err) = ens
        .series(name)
        .ok_or_else(|| Error::domain(format!("ensemble does not record `{name}`")))?;
    if slot >= mean.len() {
        return Err(Error::domain(format!("time index {slot} out of range")));
    }
    Ok(Estimate { value: mean[slot], stderr: err[slot] })
}

fn check_populations(p: &PopulationVector, spec: &Spectrum) -> Result<()> {
    if p.len() != spec.len() {
        return Err(Error::DimensionMismatch { expected: spec.len(), got: p.len() });
    }
    Ok(())
}

fn check_density(rho: &DMatrix<C64>, spec: &Spectrum) -> Result<()> {
    if rho.nrows() != spec.dim() || rho.ncols() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: rho.nrows() });
    }
    Ok(())
}

/// Weight on the ground multiplet of `spec`.
pub fn ground_state_fidelity(state: LatticeState<'_>, spec: &Spectrum) -> Result<Estimate> {
    if spec.is_empty() {
        return Err(Error::domain("spectrum is empty"));
    }
    let g = spec.ground_multiplicity();
    match state {
        LatticeState::Populations(p) => {
            check_populations(p, spec)?;
            Ok(Estimate::exact(p.as_slice()[..g].iter().sum()))
        }
        LatticeState::Density(rho) => {
            check_density(rho, spec)?;
            let f = (0..g)
                .map(|i| {
                    let v = nalgebra::DVector::from_column_slice(spec.vector(i));
                    (v.adjoint() * rho * &v)[(0, 0)].re
                })
                .sum();
            Ok(Estimate::exact(f))
        }
        LatticeState::Ensemble(ens, slot) => ensemble_value(ens, slot, FIDELITY),
    }
}

/// Mean occupation per site inside `region`.
pub fn bulk_density(
    state: LatticeState<'_>,
    spec: &Spectrum,
    basis: &FockBasis,
    region: &BulkRegion,
) -> Result<Estimate> {
    let counts = region.counts(basis)?;
    let size = region.len() as f64;
    match state {
        LatticeState::Populations(p) => {
            check_populations(p, spec)?;
            let total: f64 = p
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(eta, w)| {
                    let v = spec.vector(eta);
                    w * v.iter().zip(&counts).map(|(x, c)| x.norm_sqr() * c).sum::<f64>()
                })
                .sum();
            Ok(Estimate::exact(total / size))
        }
        LatticeState::Density(rho) => {
            check_density(rho, spec)?;
            let total: f64 = counts.iter().enumerate().map(|(a, c)| rho[(a, a)].re * c).sum();
            Ok(Estimate::exact(total / size))
        }
        LatticeState::Ensemble(ens, slot) => ensemble_value(ens, slot, BULK_DENSITY),
    }
}

/// Total charge inside `region`.
pub fn bulk_charge(state: LatticeState<'_>, spec: &Spectrum, basis: &FockBasis, region: &BulkRegion) -> Result<Estimate> {
    let d = bulk_density(state, spec, basis, region)?;
    let n = region.len() as f64;
    Ok(Estimate { value: d.value * n, stderr: d.stderr * n })
}

/// Probes recording fidelity and bulk density along trajectories.
pub fn observable_probes(spec: &Spectrum, basis: &FockBasis, region: &BulkRegion) -> Result<Vec<Probe>> {
    let g = spec.ground_multiplicity();
    let size = region.len() as f64;
    let values = region.counts(basis)?.into_iter().map(|c| c / size).collect();
    Ok(vec![
        Probe::Projector {
            name: FIDELITY.into(),
            vectors: (0..g).map(|i| spec.vector(i).to_vec()).collect(),
        },
        Probe::Diagonal { name: BULK_DENSITY.into(), values },
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    /// Flux in radians.
    pub phi: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Bulk density against flux.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxScanResult {
    points: Vec<ScanPoint>,
}

impl FluxScanResult {
    pub fn new(points: Vec<ScanPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].phi > w[0].phi)) {
            return Err(Error::domain("flux values must be strictly increasing"));
        }
        if points.iter().any(|p| !(p.phi.is_finite() && p.value.is_finite())) {
            return Err(Error::domain("scan contains non-finite values"));
        }
        Ok(FluxScanResult { points })
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    /// Points with `lo <= phi / 2pi <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> FluxScanResult {
        let tau = std::f64::consts::TAU;
        let eps = 1e-12;
        FluxScanResult {
            points: self
                .points
                .iter()
                .filter(|p| p.phi / tau >= lo - eps && p.phi / tau <= hi + eps)
                .copied()
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SlopeMethod {
    #[default]
    LeastSquares,
    /// Secant through the first and last point.
    FiniteDifference,
}

/// Linear fit of bulk density against `phi / 2pi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Covariance of (slope, intercept).
    pub covariance: [[f64; 2]; 2],
    pub points: usize,
}

impl SlopeFit {
    pub fn slope_stderr(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }
}

/// Hall response in units of the conductance quantum.
pub fn streda_slope(scan: &FluxScanResult, method: SlopeMethod) -> Result<SlopeFit> {
    let pts = scan.points();
    if pts.len() < 3 {
        return Err(Error::domain(format!("slope needs at least 3 scan points, got {}", pts.len())));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.phi / std::f64::consts::TAU).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.value).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 1e-24) {
        return Err(Error::domain("scan abscissae are degenerate"));
    }
    match method {
        SlopeMethod::LeastSquares => {
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let slope = sxy / sxx;
            let intercept = my - slope * mx;
            let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
            let s2 = rss / (n - 2.0);
            let var_b = s2 / sxx;
            let cov = -mx * var_b;
            let var_a = s2 / n + mx * mx * var_b;
            Ok(SlopeFit { slope, intercept, covariance: [[var_b, cov], [cov, var_a]], points: pts.len() })
        }
        SlopeMethod::FiniteDifference => {
            let (first, last) = (&pts[0], &pts[pts.len() - 1]);
            let dx = xs[xs.len() - 1] - xs[0];
            let slope = (last.value - first.value) / dx;
            let intercept = first.value - slope * xs[0];
            let var_b = (first.stderr.powi(2) + last.stderr.powi(2)) / (dx * dx);
            Ok(SlopeFit {
                slope,
                intercept,
                covariance: [[var_b, -xs[0] * var_b], [-xs[0] * var_b, first.stderr.powi(2) + xs[0].powi(2) * var_b]],
                points: pts.len(),
            })
        }
    }
}

/// `Q(V) - Q(0)` for bulk charges keyed by dip depth.
pub fn bulk_charge_response(charges: &[(f64, Estimate)]) -> Result<Vec<(f64, Estimate)>> {
    let reference = charges
        .iter()
        .find(|(v, _)| *v == 0.0)
        .map(|(_, q)| *q)
        .ok_or_else(|| Error::domain("bulk charge response needs a V = 0 reference"))?;
    Ok(charges
        .iter()
        .map(|(v, q)| {
            let stderr = if *v == 0.0 { 0.0 } else { q.stderr.hypot(reference.stderr) };
            (*v, Estimate { value: q.value - reference.value, stderr })
        })
        .collect())
}
