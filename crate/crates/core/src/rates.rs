//! Pauli rate equation over a truncated eigenbasis.
//!
//! `R[a][b]` is the rate from eigenstate `b` into eigenstate `a`:
//!
//! ```text
//! R_ab = sum_j kappa_j chi_j^2 |alpha_j|^2 |<a|n_j|b>|^2 / ((e_a - e_b + d_j)^2 + kappa_j^2 / 4)
//! ```
//!
//! and populations obey `dp/dt = G p` with `G_ab = R_ab` off the diagonal and
//! `G_bb = -sum_a R_ab`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::LatticeGeometry;
use crate::reservoir::{Cavity, CavitySpec};
use crate::spectra::{Spectrum, TransitionTable};

#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    rates: DMatrix<f64>,
    generator: DMatrix<f64>,
}

impl RateMatrix {
    /// Builds from an explicit rate table `rates[(to, from)]`; the diagonal is ignored.
    pub fn from_rates(mut rates: DMatrix<f64>) -> Result<Self> {
        if rates.nrows() != rates.ncols() || rates.nrows() == 0 {
            return Err(Error::domain("rate matrix must be square and nonempty"));
        }
        for i in 0..rates.nrows() {
            rates[(i, i)] = 0.0;
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::domain("rates must be finite and nonnegative"));
        }
        let mut generator = rates.clone();
        for b in 0..rates.ncols() {
            generator[(b, b)] = -rates.column(b).sum();
        }
        Ok(RateMatrix { rates, generator })
    }

    pub fn len(&self) -> usize {
        self.rates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rate from `from` into `to`.
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        self.rates[(to, from)]
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// `max_b |sum_a G_ab|`.
    pub fn column_sum_residual(&self) -> f64 {
        (0..self.len())
            .map(|b| self.generator.column(b).sum().abs())
            .fold(0.0, f64::max)
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_nonzero_rate(&self) -> Option<f64> {
        self.rates
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Writes `to,from,rate` rows for every nonzero rate.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["to", "from", "rate"])?;
        for from in 0..self.len() {
            for to in 0..self.len() {
                let r = self.rates[(to, from)];
                if to != from && r > 0.0 {
                    out.write_record([to.to_string(), from.to_string(), format!("{r:.10e}")])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn rate_matrix(spec: &Spectrum, table: &TransitionTable, cavities: &[Cavity]) -> Result<RateMatrix> {
    rate_matrix_with(spec, table, cavities, Parallelism::Auto)
}

pub fn rate_matrix_with(
    spec: &Spectrum,
    table: &TransitionTable,
    cavities: &[Cavity],
    exec: Parallelism,
) -> Result<RateMatrix> {
    let k = spec.len();
    let mut mats = Vec::with_capacity(cavities.len());
    for c in cavities {
        if !(c.kappa > 0.0) {
            return Err(Error::domain(format!("cavity at site {} needs kappa > 0", c.site)));
        }
        let m = table
            .for_site(c.site)
            .ok_or_else(|| Error::domain(format!("no transition elements for site {}", c.site)))?;
        if m.nrows() != k {
            return Err(Error::DimensionMismatch { expected: k, got: m.nrows() });
        }
        mats.push(m);
    }
    let e = spec.values();
    let rows = exec.map(k, |a| {
        let mut row = vec![0.0; k];
        for (b, slot) in row.iter_mut().enumerate() {
            if a == b {
                continue;
            }
            let mut r = 0.0;
            for (c, m) in cavities.iter().zip(&mats) {
                let amp = c.kappa * c.chi * c.chi * c.alpha.norm_sqr() * m[(a, b)].norm_sqr();
                let off = e[a] - e[b] + c.detuning;
                r += amp / (off * off + c.kappa * c.kappa / 4.0);
            }
            *slot = r;
        }
        row
    });
    RateMatrix::from_rates(DMatrix::from_fn(k, k, |a, b| rows[a][b]))
}

/// Probability vector over eigenstates.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationVector {
    p: Vec<f64>,
}

impl PopulationVector {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::domain("empty population vector"));
        }
        if p.iter().any(|x| !x.is_finite() || *x < -Self::TOLERANCE) {
            return Err(Error::Unphysical("population entries must be nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Unphysical(format!("populations sum to {s}, not 1")));
        }
        Ok(PopulationVector { p })
    }

    /// Equal weight on the first `count` of `len` states.
    pub fn lowest_uniform(len: usize, count: usize) -> Result<Self> {
        if count == 0 || count > len {
            return Err(Error::domain(format!("cannot spread over {count} of {len} states")));
        }
        let mut p = vec![0.0; len];
        p[..count].iter_mut().for_each(|x| *x = 1.0 / count as f64);
        Self::new(p)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::lowest_uniform(len, len)
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::domain("weights must have a positive sum"));
        }
        Self::new(w.into_iter().map(|x| x / s).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn ground(&self) -> f64 {
        self.p[0]
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Relative tolerance of the truncated Poisson series.
const SERIES_TOL: f64 = 1e-13;

/// `exp(G t) p0` by uniformization.
pub fn evolve_populations(rates: &RateMatrix, p0: &PopulationVector, t: f64) -> Result<PopulationVector> {
    if p0.len() != rates.len() {
        return Err(Error::DimensionMismatch { expected: rates.len(), got: p0.len() });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("evolution time must be >= 0, got {t}")));
    }
    let g = rates.generator();
    let q = (0..rates.len()).map(|i| -g[(i, i)]).fold(0.0, f64::max);
    if q == 0.0 || t == 0.0 {
        return Ok(p0.clone());
    }
    // stochastic matrix P = I + G / q
    let k = rates.len();
    let mut stoch = g / q;
    for i in 0..k {
        stoch[(i, i)] += 1.0;
    }
    // keep each Poisson parameter moderate so exp(-qt) does not underflow
    let total = q * t;
    let segments = (total / 50.0).ceil().max(1.0) as usize;
    let lam = total / segments as f64;
    let mut p = DVector::from_column_slice(p0.as_slice());
    for _ in 0..segments {
        let mut term = p.clone();
        let mut weight = (-lam).exp();
        let mut acc = &term * weight;
        let mut mass = weight;
        let mut n = 0usize;
        while 1.0 - mass > SERIES_TOL {
            n += 1;
            term = &stoch * &term;
            weight *= lam / n as f64;
            acc += &term * weight;
            mass += weight;
            if n > 10_000 {
                return Err(Error::NoConvergence { iterations: n, best_residual: 1.0 - mass });
            }
        }
        // the truncated tail carries mass 1 - mass; restore normalization
        p = acc / mass;
    }
    let clean: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clean.iter().sum();
    PopulationVector::new(clean.into_iter().map(|x| x / s).collect())
}

/// Populations at each of a nondecreasing list of times.
pub fn evolve_on_grid(rates: &RateMatrix, p0: &PopulationVector, times: &[f64]) -> Result<Vec<PopulationVector>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("time grid must be nondecreasing"));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut p = p0.clone();
    let mut now = 0.0;
    for &t in times {
        if t < 0.0 {
            return Err(Error::domain("times must be >= 0"));
        }
        p = evolve_populations(rates, &p, t - now)?;
        now = t;
        out.push(p.clone());
    }
    Ok(out)
}

/// Stationary distributions of the rate equation.
#[derive(Clone, Debug)]
pub struct SteadyState {
    /// One distribution per closed communicating class.
    pub distributions: Vec<PopulationVector>,
    /// State indices of each closed class.
    pub classes: Vec<Vec<usize>>,
    /// More than one closed class: the kernel of `G` is degenerate.
    pub degenerate: bool,
}

impl SteadyState {
    pub fn unique(&self) -> Option<&PopulationVector> {
        (!self.degenerate).then(|| &self.distributions[0])
    }
}

/// Rates below this fraction of the largest rate are treated as absent
/// when classifying states.
const GRAPH_THRESHOLD: f64 = 1e-12;

fn closed_classes(rates: &RateMatrix) -> (Vec<Vec<usize>>, Vec<usize>) {
    let k = rates.len();
    let cut = GRAPH_THRESHOLD * rates.max_rate();
    let mut graph = DiGraph::<(), ()>::with_capacity(k, 0);
    let nodes: Vec<_> = (0..k).map(|_| graph.add_node(())).collect();
    for from in 0..k {
        for to in 0..k {
            if from != to && rates.rate(to, from) > cut {
                graph.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; k];
    for (c, scc) in sccs.iter().enumerate() {
        for n in scc {
            component[n.index()] = c;
        }
    }
    let mut closed = Vec::new();
    for (c, scc) in sccs.iter().enumerate() {
        let leaks = scc.iter().any(|n| {
            graph
                .neighbors(*n)
                .any(|m| component[m.index()] != c)
        });
        if !leaks {
            let mut states: Vec<usize> = scc.iter().map(|n| n.index()).collect();
            states.sort_unstable();
            closed.push(states);
        }
    }
    closed.sort();
    (closed, component)
}

fn class_distribution(rates: &RateMatrix, class: &[usize]) -> Result<PopulationVector> {
    let k = rates.len();
    let n = class.len();
    let mut p = vec![0.0; k];
    if n == 1 {
        p[class[0]] = 1.0;
        return PopulationVector::new(p);
    }
    let g = rates.generator();
    // replace the last balance equation by normalization
    let mut a = DMatrix::from_fn(n, n, |i, j| g[(class[i], class[j])]);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Unphysical("singular balance equations".into()))?;
    for (i, &s) in class.iter().enumerate() {
        p[s] = x[i].max(0.0);
    }
    PopulationVector::from_weights(p)
}

pub fn steady_state(rates: &RateMatrix) -> Result<SteadyState> {
    let (classes, _) = closed_classes(rates);
    let distributions = classes
        .iter()
        .map(|c| class_distribution(rates, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SteadyState {
        degenerate: classes.len() > 1,
        distributions,
        classes,
    })
}

/// Long-time limit of the evolution started from `p0`, weighting each closed
/// class by its absorption probability.
pub fn steady_state_from(rates: &RateMatrix, p0: &PopulationVector) -> Result<PopulationVector> {
    if p0.len() != rates.len() {
        return Err(Error::DimensionMismatch { expected: rates.len(), got: p0.len() });
    }
    let ss = steady_state(rates)?;
    if ss.classes.len() == 1 {
        return Ok(ss.distributions[0].clone());
    }
    let k = rates.len();
    let mut in_closed = vec![None; k];
    for (c, class) in ss.classes.iter().enumerate() {
        for &s in class {
            in_closed[s] = Some(c);
        }
    }
    let transient: Vec<usize> = (0..k).filter(|&s| in_closed[s].is_none()).collect();
    let g = rates.generator();
    let mut mix = vec![0.0; k];
    for (c, class) in ss.classes.iter().enumerate() {
        let mut weight: f64 = class.iter().map(|&s| p0.as_slice()[s]).sum();
        if !transient.is_empty() {
            let t = transient.len();
            let a = DMatrix::from_fn(t, t, |i, j| g[(transient[j], transient[i])]);
            let b = DVector::from_fn(t, |i, _| -class.iter().map(|&s| g[(s, transient[i])]).sum::<f64>());
            let h = a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Unphysical("singular absorption equations".into()))?;
            weight += transient
                .iter()
                .enumerate()
                .map(|(i, &s)| p0.as_slice()[s] * h[i])
                .sum::<f64>();
        }
        debug_assert!(in_closed.contains(&Some(c)));
        for (m, q) in mix.iter_mut().zip(ss.distributions[c].as_slice()) {
            *m += weight * q;
        }
    }
    PopulationVector::from_weights(mix.into_iter().map(|x| x.max(0.0)).collect())
}

/// Adds copies of every cavity at the 90, 180 and 270 degree rotated sites.
pub fn symmetrize_cavities(cavities: &[CavitySpec], geom: &LatticeGeometry) -> Result<Vec<CavitySpec>> {
    if geom.size().is_none() {
        return Err(Error::domain("symmetrization needs a square lattice"));
    }
    let same = |a: &CavitySpec, b: &CavitySpec| {
        a.g == b.g && a.delta == b.delta && a.pump == b.pump && a.kappa == b.kappa && a.detuning == b.detuning
    };
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out: Vec<CavitySpec> = Vec::new();
    let mut push = |c: CavitySpec, out: &mut Vec<CavitySpec>| -> Result<()> {
        match seen.get(&c.site) {
            Some(&i) if same(&out[i], &c) => Ok(()),
            Some(_) => Err(Error::CavityCollision { site: c.site }),
            None => {
                seen.insert(c.site, out.len());
                out.push(c);
                Ok(())
            }
        }
    };
    for c in cavities {
        if c.site >= geom.num_sites() {
            return Err(Error::domain(format!("cavity site {} outside the lattice", c.site)));
        }
        push(c.clone(), &mut out)?;
    }
    for turn in 1..4 {
        for c in cavities {
            let mut site = c.site;
            for _ in 0..turn {
                site = geom.rotate90(site).expect("square lattice");
            }
            push(CavitySpec { site, ..c.clone() }, &mut out)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use std::f64::consts::PI;

    fn two_level(up: f64, down: f64) -> RateMatrix {
        RateMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, down, up, 0.0])).unwrap()
    }

    #[test]
    fn one_way_decay() {
        let r = two_level(0.0, 0.3);
        let p0 = PopulationVector::new(vec![0.0, 1.0]).unwrap();
        for t in [0.5, 3.0, 40.0] {
            let p = evolve_populations(&r, &p0, t).unwrap();
            assert!((p.as_slice()[1] - (-0.3 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_generator_is_identity() {
        let r = RateMatrix::from_rates(DMatrix::zeros(3, 3)).unwrap();
        let p0 = PopulationVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(evolve_populations(&r, &p0, 100.0).unwrap(), p0);
    }

    #[test]
    fn matches_dense_exponential() {
        let rates = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.11 + 0.01 * (i + j) as f64);
        let r = RateMatrix::from_rates(rates).unwrap();
        let p0 = PopulationVector::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]).unwrap();
        for t in [0.1, 2.0, 50.0] {
            let want = (r.generator() * t).exp() * DVector::from_column_slice(p0.as_slice());
            let got = evolve_populations(&r, &p0, t).unwrap();
            for i in 0..5 {
                assert!((got.as_slice()[i] - want[i]).abs() < 1e-9 * want[i].abs().max(1e-3));
            }
        }
        assert!(r.column_sum_residual() < 1e-15);
    }

    #[test]
    fn detailed_balance() {
        let r = two_level(0.2, 0.7);
        let ss = steady_state(&r).unwrap();
        assert!(!ss.degenerate);
        let p = ss.unique().unwrap().as_slice();
        assert!((p[1] / p[0] - 0.2 / 0.7).abs() < 1e-14);
        let p0 = PopulationVector::new(vec![1.0, 0.0]).unwrap();
        let t = 100.0 / r.min_nonzero_rate().unwrap();
        let late = evolve_populations(&r, &p0, t).unwrap();
        assert!(late.total_variation(ss.unique().unwrap()) < 1e-6);
    }

    #[test]
    fn disconnected_blocks_are_flagged() {
        let mut rates = DMatrix::zeros(4, 4);
        rates[(0, 1)] = 1.0;
        rates[(1, 0)] = 0.5;
        rates[(2, 3)] = 0.4;
        rates[(3, 2)] = 0.4;
        let r = RateMatrix::from_rates(rates).unwrap();
        let ss = steady_state(&r).unwrap();
        assert!(ss.degenerate);
        assert_eq!(ss.classes, vec![vec![0, 1], vec![2, 3]]);
        let p0 = PopulationVector::new(vec![0.0, 0.6, 0.4, 0.0]).unwrap();
        let lim = steady_state_from(&r, &p0).unwrap();
        let late = evolve_populations(&r, &p0, 500.0).unwrap();
        assert!(lim.total_variation(&late) < 1e-9);
    }

    #[test]
    fn transient_states_are_absorbed() {
        // state 2 leaks into two absorbing states with rates 1 and 3
        let mut rates = DMatrix::zeros(3, 3);
        rates[(0, 2)] = 1.0;
        rates[(1, 2)] = 3.0;
        let r = RateMatrix::from_rates(rates).unwrap();
        let p0 = PopulationVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        let lim = steady_state_from(&r, &p0).unwrap();
        assert!((lim.as_slice()[0] - 0.25).abs() < 1e-14);
        assert!((lim.as_slice()[1] - 0.75).abs() < 1e-14);
    }

    fn single_cavity_rate(gap: f64, d: f64, kappa: f64) -> f64 {
        let spec = Spectrum::from_parts(
            vec![0.0, gap],
            vec![vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)], vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]],
        )
        .unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), C64::new(0.3, 0.4), C64::new(0.3, -0.4), C64::new(0.5, 0.0)]);
        let table = TransitionTable::from_matrices(vec![0], vec![m]).unwrap();
        let cav = Cavity::new(0, 0.02, C64::new(1.5, -0.5), kappa, d).unwrap();
        rate_matrix(&spec, &table, &[cav]).unwrap().rate(0, 1)
    }

    #[test]
    fn lorentzian_peak_and_half_width() {
        let (chi, a2, m2, kappa) = (0.02, 2.5, 0.25, 0.05);
        let peak = single_cavity_rate(0.3, 0.3, kappa);
        assert!((peak - 4.0 * chi * chi * a2 * m2 / kappa).abs() < 1e-15);
        // detuning by kappa/2 halves the rate
        let half = single_cavity_rate(0.3, 0.3 + kappa / 2.0, kappa);
        assert!((peak / half - 2.0).abs() < 1e-12);
        let full = single_cavity_rate(0.3, 0.3 + kappa, kappa);
        assert!((peak / full - 5.0).abs() < 1e-12);
    }

    #[test]
    fn symmetrization() {
        let g = LatticeGeometry::square(4, PI / 2.0).unwrap();
        let c = |site| CavitySpec { site, g: 0.8, delta: 38.0, pump: 0.4, kappa: 0.04, detuning: 0.13 };
        let four = vec![c(1), CavitySpec { detuning: 0.16, ..c(0) }, CavitySpec { detuning: 0.26, ..c(4) }, CavitySpec { detuning: 0.14, ..c(5) }];
        let sym = symmetrize_cavities(&four, &g).unwrap();
        assert_eq!(sym.len(), 16);
        assert_eq!(symmetrize_cavities(&sym, &g).unwrap(), sym);
        let mut sites: Vec<usize> = sym.iter().map(|c| c.site).collect();
        sites.sort_unstable();
        assert_eq!(sites, (0..16).collect::<Vec<_>>());

        // a central site on an odd lattice is its own image
        let g3 = LatticeGeometry::square(3, 0.0).unwrap();
        assert_eq!(symmetrize_cavities(&[c(4)], &g3).unwrap().len(), 1);
        // two cavities in one orbit with different parameters collide
        let bad = vec![c(0), CavitySpec { kappa: 0.05, ..c(2) }];
        assert!(matches!(symmetrize_cavities(&bad, &g3), Err(Error::CavityCollision { .. })));
    }
}
