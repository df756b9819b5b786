//! Hard-core boson Fock bases and many-body operators on the open square
//! lattice with Peierls phases.
//!
//! Sites are labelled by `(m, n)` with linear index `j = cols * m + n`. An
//! x-bond joins `(m, n)` and `(m + 1, n)`; a y-bond joins `(m, n)` and
//! `(m, n + 1)`. The Harper-Hofstadter hopping in Landau gauge reads
//!
//! ```text
//! H / J_eff = - sum_{m,n} exp(-i phi n) a+_{m,n} a_{m+1,n} + a+_{m,n} a_{m,n+1} + h.c.
//! ```
//!
//! Hard-core statistics come from the basis itself: configurations are
//! bit patterns with at most one particle per site.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::linalg::{CsrMatrix, C64};

/// Largest basis the enumerator will build.
pub const MAX_BASIS_DIM: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondKind {
    X,
    Y,
}

/// Nearest-neighbour pair; `to` is the `+1` neighbour of `from` along `kind`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub from: usize,
    pub to: usize,
    pub kind: BondKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry {
    rows: usize,
    cols: usize,
    flux: f64,
}

impl LatticeGeometry {
    /// `size x size` lattice, `1 <= size <= 8`.
    pub fn square(size: usize, flux: f64) -> Result<Self> {
        if !(1..=8).contains(&size) {
            return Err(Error::domain(format!("lattice size must be in 1..=8, got {size}")));
        }
        Self::rectangular(size, size, flux)
    }

    /// `rows x cols` lattice; used for small oracle models such as a two-site chain.
    pub fn rectangular(rows: usize, cols: usize, flux: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols > 64 {
            return Err(Error::domain(format!(
                "lattice {rows}x{cols} must have between 1 and 64 sites"
            )));
        }
        if !flux.is_finite() {
            return Err(Error::domain("flux must be finite"));
        }
        Ok(LatticeGeometry { rows, cols, flux })
    }

    pub fn with_flux(&self, flux: f64) -> Self {
        LatticeGeometry { flux, ..self.clone() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length for square lattices.
    pub fn size(&self) -> Option<usize> {
        (self.rows == self.cols).then_some(self.rows)
    }

    pub fn flux(&self) -> f64 {
        self.flux
    }

    pub fn num_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn site(&self, m: usize, n: usize) -> usize {
        debug_assert!(m < self.rows && n < self.cols);
        self.cols * m + n
    }

    pub fn coords(&self, j: usize) -> (usize, usize) {
        (j / self.cols, j % self.cols)
    }

    pub fn bonds(&self) -> Vec<Bond> {
        let mut out = Vec::with_capacity(2 * self.num_sites());
        for m in 0..self.rows {
            for n in 0..self.cols {
                let here = self.site(m, n);
                if m + 1 < self.rows {
                    out.push(Bond { from: here, to: self.site(m + 1, n), kind: BondKind::X });
                }
                if n + 1 < self.cols {
                    out.push(Bond { from: here, to: self.site(m, n + 1), kind: BondKind::Y });
                }
            }
        }
        out
    }

    /// Plaquette corners ordered `(m,n), (m+1,n), (m+1,n+1), (m,n+1)`.
    pub fn plaquettes(&self) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for m in 0..self.rows.saturating_sub(1) {
            for n in 0..self.cols.saturating_sub(1) {
                out.push([
                    self.site(m, n),
                    self.site(m + 1, n),
                    self.site(m + 1, n + 1),
                    self.site(m, n + 1),
                ]);
            }
        }
        out
    }

    /// Image of site `j` under a 90 degree rotation `(m, n) -> (n, L-1-m)`.
    pub fn rotate90(&self, j: usize) -> Option<usize> {
        let l = self.size()?;
        let (m, n) = self.coords(j);
        Some(self.site(n, l - 1 - m))
    }

    /// Landau-gauge Peierls amplitudes `t` with `H = -sum (t a+_from a_to + h.c.)`.
    pub fn peierls_hoppings(&self, j_eff: f64) -> Vec<(Bond, C64)> {
        self.bonds()
            .into_iter()
            .map(|b| {
                let t = match b.kind {
                    BondKind::X => {
                        let (_, n) = self.coords(b.from);
                        C64::from_polar(j_eff, -self.flux * n as f64)
                    }
                    BondKind::Y => C64::new(j_eff, 0.0),
                };
                (b, t)
            })
            .collect()
    }
}

/// Flux through every plaquette, `arg(t_{0,1} t_{1,2} t_{2,3} t_{3,0})` over the
/// corners of [`LatticeGeometry::plaquettes`], wrapped to `(-pi, pi]`.
/// `hop(l, l')` is the amplitude of `a+_l a_l'`.
pub fn plaquette_fluxes<F>(geom: &LatticeGeometry, hop: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> C64,
{
    geom.plaquettes()
        .into_iter()
        .map(|[a, b, c, d]| (hop(a, b) * hop(b, c) * hop(c, d) * hop(d, a)).arg())
        .collect()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Fixed particle number hard-core configurations, ascending by bit pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct FockBasis {
    sites: usize,
    particles: usize,
    states: Vec<u64>,
}

/// Basis of `n` particles on an `l x l` lattice.
pub fn build_basis(l: usize, n: usize) -> Result<FockBasis> {
    FockBasis::new(l * l, n)
}

impl FockBasis {
    pub fn new(sites: usize, particles: usize) -> Result<Self> {
        if sites == 0 || sites > 64 {
            return Err(Error::domain(format!("number of sites must be in 1..=64, got {sites}")));
        }
        if particles > sites {
            return Err(Error::domain(format!(
                "particle number {particles} out of range 0..={sites}"
            )));
        }
        let dim = binomial(sites, particles);
        if dim > MAX_BASIS_DIM as u128 {
            return Err(Error::DimensionCap {
                dim: usize::try_from(dim).unwrap_or(usize::MAX),
                cap: MAX_BASIS_DIM,
                hint: "sector too large for exact enumeration",
            });
        }
        let dim = dim as usize;
        let mut states = Vec::with_capacity(dim);
        if particles == 0 {
            states.push(0);
        } else {
            // Gosper's hack walks the patterns in ascending order
            let mut x: u128 = (1u128 << particles) - 1;
            for _ in 0..dim {
                states.push(x as u64);
                let c = x & x.wrapping_neg();
                let r = x + c;
                x = (((r ^ x) >> 2) / c) | r;
            }
        }
        Ok(FockBasis { sites, particles, states })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn pattern(&self, index: usize) -> u64 {
        self.states[index]
    }

    pub fn patterns(&self) -> &[u64] {
        &self.states
    }

    pub fn index_of(&self, pattern: u64) -> Option<usize> {
        self.states.binary_search(&pattern).ok()
    }

    #[inline]
    pub fn occupied(&self, index: usize, site: usize) -> bool {
        (self.states[index] >> site) & 1 == 1
    }

    /// `<a|n_site|a>` for every basis state.
    pub fn site_occupations(&self, site: usize) -> Vec<f64> {
        self.states
            .iter()
            .map(|&s| ((s >> site) & 1) as f64)
            .collect()
    }
}

/// Complex sparse operator whose Hermiticity has been checked on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseHermitianOperator {
    matrix: CsrMatrix,
}

impl SparseHermitianOperator {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        let residual = matrix.hermiticity_residual();
        if residual >= Self::TOLERANCE {
            return Err(Error::NotHermitian { residual });
        }
        Ok(SparseHermitianOperator { matrix })
    }

    pub fn is_hermitian(&self) -> bool {
        true
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matrix.matvec(x, y)
    }
}

/// On-site energies in units of `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
}

impl PotentialField {
    pub fn zeros(sites: usize) -> Self {
        PotentialField { values: vec![0.0; sites] }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("potential at site {j} is not finite")));
        }
        Ok(PotentialField { values })
    }

    /// Potential `-depth` on the central 2x2 block of an even square lattice.
    pub fn pinning_dip(geom: &LatticeGeometry, depth: f64) -> Result<Self> {
        let sites = pinning_sites(geom)?;
        let mut field = Self::zeros(geom.num_sites());
        for j in sites {
            field.set(j, -depth)?;
        }
        Ok(field)
    }

    pub fn set(&mut self, site: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::domain(format!("potential at site {site} is not finite")));
        }
        let slot = self
            .values
            .get_mut(site)
            .ok_or_else(|| Error::domain(format!("site {site} out of range")))?;
        *slot = value;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// The four central sites `(L/2-1 | L/2, L/2-1 | L/2)` of an even square lattice.
pub fn pinning_sites(geom: &LatticeGeometry) -> Result<Vec<usize>> {
    let l = geom
        .size()
        .filter(|l| l % 2 == 0)
        .ok_or_else(|| Error::domain("pinning dip needs an even square lattice"))?;
    let h = l / 2;
    Ok(vec![
        geom.site(h - 1, h - 1),
        geom.site(h - 1, h),
        geom.site(h, h - 1),
        geom.site(h, h),
    ])
}

/// Builds `-sum_bonds (t a+_from a_to + h.c.) + sum_j V_j n_j` on `basis`.
pub fn build_hopping_operator(
    basis: &FockBasis,
    hoppings: &[(Bond, C64)],
    pot: &PotentialField,
    exec: Parallelism,
) -> Result<SparseHermitianOperator> {
    if pot.values().len() != basis.sites() {
        return Err(Error::DimensionMismatch {
            expected: basis.sites(),
            got: pot.values().len(),
        });
    }
    if let Some((b, _)) = hoppings.iter().find(|(b, _)| b.from >= basis.sites() || b.to >= basis.sites()) {
        return Err(Error::domain(format!("bond {b:?} outside the basis sites")));
    }
    let rows = exec.map(basis.dim(), |r| {
        let s = basis.pattern(r);
        let mut row = Vec::with_capacity(2 * hoppings.len().min(16) + 1);
        let diag: f64 = (0..basis.sites())
            .filter(|&j| (s >> j) & 1 == 1)
            .map(|j| pot.values()[j])
            .sum();
        if diag != 0.0 {
            row.push((r, C64::new(diag, 0.0)));
        }
        for &(b, t) in hoppings {
            let f = (s >> b.from) & 1;
            let g = (s >> b.to) & 1;
            if f == g {
                continue;
            }
            let c = basis
                .index_of(s ^ (1 << b.from) ^ (1 << b.to))
                .expect("hopping preserves particle number");
            // row has `from` filled: reached by a+_from a_to
            let amp = if f == 1 { -t } else { -t.conj() };
            row.push((c, amp));
        }
        row
    });
    SparseHermitianOperator::new(CsrMatrix::from_rows(basis.dim(), rows))
}

/// Harper-Hofstadter hard-core boson Hamiltonian plus on-site potential.
pub fn build_hhbh(
    geom: &LatticeGeometry,
    j_eff: f64,
    basis: &FockBasis,
    pot: &PotentialField,
) -> Result<SparseHermitianOperator> {
    build_hhbh_with(geom, j_eff, basis, pot, Parallelism::Auto)
}

pub fn build_hhbh_with(
    geom: &LatticeGeometry,
    j_eff: f64,
    basis: &FockBasis,
    pot: &PotentialField,
    exec: Parallelism,
) -> Result<SparseHermitianOperator> {
    if basis.sites() != geom.num_sites() {
        return Err(Error::DimensionMismatch {
            expected: geom.num_sites(),
            got: basis.sites(),
        });
    }
    if !(j_eff > 0.0 && j_eff.is_finite()) {
        return Err(Error::domain(format!("J_eff must be positive, got {j_eff}")));
    }
    build_hopping_operator(basis, &geom.peierls_hoppings(j_eff), pot, exec)
}

/// Site density operator `n_j`.
pub fn number_operator(basis: &FockBasis, site: usize) -> Result<SparseHermitianOperator> {
    if site >= basis.sites() {
        return Err(Error::domain(format!("site {site} out of range 0..{}", basis.sites())));
    }
    let diag: Vec<C64> = basis
        .site_occupations(site)
        .into_iter()
        .map(|x| C64::new(x, 0.0))
        .collect();
    SparseHermitianOperator::new(CsrMatrix::from_diagonal(&diag))
}

/// Returns `U^dag A U` with `U = exp(i sum_j phases_j n_j)`.
///
/// A hopping amplitude `t_{l,l'}` picks up `exp(-i (phases_l - phases_l'))`.
pub fn gauge_transform(
    op: &SparseHermitianOperator,
    phases: &[f64],
    basis: &FockBasis,
) -> Result<SparseHermitianOperator> {
    if phases.len() != basis.sites() {
        return Err(Error::DimensionMismatch {
            expected: basis.sites(),
            got: phases.len(),
        });
    }
    if op.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: op.dim(),
        });
    }
    if phases.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("gauge phases must be finite"));
    }
    let total: Vec<f64> = basis
        .patterns()
        .iter()
        .map(|&s| {
            (0..basis.sites())
                .filter(|&j| (s >> j) & 1 == 1)
                .map(|j| phases[j])
                .sum()
        })
        .collect();
    let m = op
        .matrix()
        .map_values(|r, c, v| v * C64::from_polar(1.0, total[c] - total[r]));
    SparseHermitianOperator::new(m)
}
