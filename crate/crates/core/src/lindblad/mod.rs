//! Lattice plus cavities in the displaced frame.
//!
//! ```text
//! H_eff = H_lat + sum_j [ -chi_j n_j (c+_j c_j + alpha_j c+_j + alpha_j* c_j) + d_j c+_j c_j ]
//! ```
//!
//! with jump operators `sqrt(kappa_j) c_j`. Composite states are stored
//! lattice-major: index `a * block + c` where `c` enumerates the cavity Fock
//! states in mixed radix, first cavity most significant.

mod dopri;
mod krylov;
pub mod direct;
pub mod trajectories;

pub use direct::{direct_lindblad, photon_number, pure_density, reduced_lattice, DensityEvolution};
pub use trajectories::{
    evolve_state, run_trajectories, uniform_grid, EigenMixture, InfiniteTemperature, Probe, PureState, StateSampler,
    TrajectoryEnsemble, TrajectoryOptions,
};

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::{FockBasis, SparseHermitianOperator};
use crate::linalg::{CsrMatrix, C64};
use crate::reservoir::Cavity;

/// Largest composite dimension built by default.
pub const COMPOSITE_CAP: usize = 50_000;

/// Lattice sector times truncated cavity ladders.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSpace {
    lattice_dim: usize,
    levels: Vec<usize>,
    strides: Vec<usize>,
    block: usize,
}

impl CompositeSpace {
    pub fn new(lattice_dim: usize, n_max: &[usize]) -> Result<Self> {
        if n_max.contains(&0) {
            return Err(Error::domain("every cavity needs n_max >= 1"));
        }
        let levels: Vec<usize> = n_max.iter().map(|n| n + 1).collect();
        let mut strides = vec![1; levels.len()];
        for j in (0..levels.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * levels[j + 1];
        }
        let block = levels.iter().product::<usize>();
        Ok(CompositeSpace { lattice_dim, levels, strides, block })
    }

    pub fn dim(&self) -> usize {
        self.lattice_dim * self.block
    }

    pub fn lattice_dim(&self) -> usize {
        self.lattice_dim
    }

    /// Number of cavity Fock states per lattice configuration.
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn cavities(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn index(&self, lattice: usize, photons: &[usize]) -> usize {
        debug_assert_eq!(photons.len(), self.levels.len());
        let c: usize = photons.iter().zip(&self.strides).map(|(q, s)| q * s).sum();
        lattice * self.block + c
    }

    /// Inverse of [`CompositeSpace::index`].
    pub fn split(&self, i: usize) -> (usize, Vec<usize>) {
        let c = i % self.block;
        let photons = self
            .strides
            .iter()
            .zip(&self.levels)
            .map(|(s, l)| (c / s) % l)
            .collect();
        (i / self.block, photons)
    }

    /// Photon number of cavity `j` in cavity-block position `c`.
    pub fn photons(&self, c: usize, j: usize) -> usize {
        (c / self.strides[j]) % self.levels[j]
    }

    /// Lattice vector tensored with the cavity vacuum.
    pub fn embed_vacuum(&self, lattice: &[C64]) -> Vec<C64> {
        let mut psi = vec![C64::new(0.0, 0.0); self.dim()];
        for (a, v) in lattice.iter().enumerate() {
            psi[a * self.block] = *v;
        }
        psi
    }
}

/// `sqrt(kappa) c_j` for cavity `j` of the composite.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpOperator {
    pub cavity: usize,
    pub site: usize,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drift {
    /// `H_eff` itself.
    Hermitian,
    /// `H_eff - (i/2) sum_j kappa_j c+_j c_j`.
    NonHermitian,
}

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    space: CompositeSpace,
    lattice: CsrMatrix,
    cavities: Vec<Cavity>,
    /// Bit `j` set when lattice state `a` occupies the site of cavity `j`.
    masks: Vec<u64>,
    /// Photon number of each cavity at each block position, `[j][c]`.
    photons: Vec<Vec<u8>>,
    /// `sqrt(q)` and `sqrt(q + 1)` (zero at the top level), `[j][c]`.
    lower: Vec<Vec<f64>>,
    raise: Vec<Vec<f64>>,
    /// Cavity diagonal per distinct mask, Hermitian and with the decay term.
    diags: Vec<(Vec<C64>, Vec<C64>)>,
    diag_slot: Vec<usize>,
}

/// Assembles the composite effective Hamiltonian and its jump operators.
pub fn build_composite(
    h_lat: &SparseHermitianOperator,
    basis: &FockBasis,
    cavities: &[Cavity],
    n_max: &[usize],
) -> Result<(EffectiveHamiltonian, Vec<JumpOperator>)> {
    build_composite_capped(h_lat, basis, cavities, n_max, COMPOSITE_CAP)
}

pub fn build_composite_capped(
    h_lat: &SparseHermitianOperator,
    basis: &FockBasis,
    cavities: &[Cavity],
    n_max: &[usize],
    cap: usize,
) -> Result<(EffectiveHamiltonian, Vec<JumpOperator>)> {
    if h_lat.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: h_lat.dim() });
    }
    if n_max.len() != cavities.len() {
        return Err(Error::DimensionMismatch { expected: cavities.len(), got: n_max.len() });
    }
    if cavities.len() > 64 {
        return Err(Error::domain("at most 64 cavities are supported"));
    }
    if let Some(c) = cavities.iter().find(|c| c.site >= basis.sites()) {
        return Err(Error::domain(format!("cavity site {} outside the lattice", c.site)));
    }
    let space = CompositeSpace::new(basis.dim(), n_max)?;
    let dim = basis
        .dim()
        .checked_mul(space.block())
        .filter(|&d| d <= cap)
        .ok_or(Error::DimensionCap {
            dim: basis.dim().saturating_mul(space.block()),
            cap,
            hint: "reduce n_max or the number of cavities",
        })?;
    debug_assert_eq!(dim, space.dim());
    let masks: Vec<u64> = basis
        .patterns()
        .iter()
        .map(|&s| {
            cavities
                .iter()
                .enumerate()
                .filter(|(_, c)| (s >> c.site) & 1 == 1)
                .fold(0u64, |m, (j, _)| m | (1 << j))
        })
        .collect();
    let photons: Vec<Vec<u8>> = (0..cavities.len())
        .map(|j| (0..space.block()).map(|c| space.photons(c, j) as u8).collect())
        .collect();
    let lower = photons
        .iter()
        .map(|qs| qs.iter().map(|&q| (q as f64).sqrt()).collect())
        .collect();
    let raise = photons
        .iter()
        .zip(&space.levels)
        .map(|(qs, l)| {
            qs.iter()
                .map(|&q| if (q as usize) + 1 < *l { (q as f64 + 1.0).sqrt() } else { 0.0 })
                .collect()
        })
        .collect();
    let mut distinct: Vec<u64> = Vec::new();
    let diag_slot = masks
        .iter()
        .map(|m| match distinct.iter().position(|d| d == m) {
            Some(i) => i,
            None => {
                distinct.push(*m);
                distinct.len() - 1
            }
        })
        .collect();
    let diags = distinct
        .iter()
        .map(|&mask| {
            let mut herm = vec![C64::new(0.0, 0.0); space.block()];
            let mut damped = herm.clone();
            for (j, cav) in cavities.iter().enumerate() {
                let shift = cav.detuning - if (mask >> j) & 1 == 1 { cav.chi } else { 0.0 };
                for (c, &q) in photons[j].iter().enumerate() {
                    let q = q as f64;
                    herm[c] += C64::new(shift * q, 0.0);
                    damped[c] += C64::new(shift * q, -0.5 * cav.kappa * q);
                }
            }
            (herm, damped)
        })
        .collect();
    let h = EffectiveHamiltonian {
        space,
        lattice: h_lat.matrix().clone(),
        cavities: cavities.to_vec(),
        masks,
        photons,
        lower,
        raise,
        diags,
        diag_slot,
    };
    if dim <= 20_000 {
        let residual = h.to_csr(Drift::Hermitian).hermiticity_residual();
        if residual >= SparseHermitianOperator::TOLERANCE {
            return Err(Error::NotHermitian { residual });
        }
    }
    let jumps = cavities
        .iter()
        .enumerate()
        .map(|(j, c)| JumpOperator { cavity: j, site: c.site, kappa: c.kappa })
        .collect();
    Ok((h, jumps))
}

impl EffectiveHamiltonian {
    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn cavities(&self) -> &[Cavity] {
        &self.cavities
    }

    pub fn lattice(&self) -> &CsrMatrix {
        &self.lattice
    }

    /// `y = H x` (or the non-Hermitian drift) block by block.
    pub fn apply(&self, x: &[C64], y: &mut [C64], drift: Drift) {
        self.apply_with(x, y, drift, Parallelism::Sequential)
    }

    pub fn apply_with(&self, x: &[C64], y: &mut [C64], drift: Drift, exec: Parallelism) {
        let block = self.space.block();
        exec.for_each_chunk_mut(y, block, |a, yb| self.apply_block(a, x, yb, drift));
    }

    fn cavity_diag(&self, a: usize, drift: Drift) -> &[C64] {
        let (herm, damped) = &self.diags[self.diag_slot[a]];
        match drift {
            Drift::Hermitian => herm,
            Drift::NonHermitian => damped,
        }
    }

    fn apply_block(&self, a: usize, x: &[C64], yb: &mut [C64], drift: Drift) {
        let block = self.space.block();
        let xa = &x[a * block..(a + 1) * block];
        for ((y, d), x) in yb.iter_mut().zip(self.cavity_diag(a, drift)).zip(xa) {
            *y = d * x;
        }
        for (b, h) in self.lattice.row(a) {
            let xb = &x[b * block..(b + 1) * block];
            for (y, x) in yb.iter_mut().zip(xb) {
                *y += h * x;
            }
        }
        let mask = self.masks[a];
        for (j, cav) in self.cavities.iter().enumerate() {
            if (mask >> j) & 1 == 0 {
                continue;
            }
            let stride = self.space.strides[j];
            let up = -cav.chi * cav.alpha;
            let down = up.conj();
            // Entries where the ladder leaves the truncated space carry a zero factor.
            for ((y, w), x) in yb[stride..].iter_mut().zip(&self.lower[j][stride..]).zip(xa) {
                *y += up * *w * x;
            }
            for ((y, w), x) in yb.iter_mut().zip(&self.raise[j]).zip(&xa[stride..]) {
                *y += down * *w * x;
            }
        }
    }

    /// `y = sqrt(kappa) c_j x`.
    pub fn apply_jump(&self, jump: &JumpOperator, x: &[C64], y: &mut [C64]) {
        let block = self.space.block();
        let stride = self.space.strides[jump.cavity];
        let s = jump.kappa.sqrt();
        let raise = &self.raise[jump.cavity];
        for (yb, xb) in y.chunks_mut(block).zip(x.chunks(block)) {
            yb[block - stride..].iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for ((v, w), x) in yb.iter_mut().zip(raise).zip(&xb[stride..]) {
                *v = x * (s * w);
            }
        }
    }

    /// Explicit sparse form.
    pub fn to_csr(&self, drift: Drift) -> CsrMatrix {
        let block = self.space.block();
        let mut rows: Vec<Vec<(usize, C64)>> = Vec::with_capacity(self.dim());
        for a in 0..self.space.lattice_dim() {
            let diag = self.cavity_diag(a, drift);
            let mask = self.masks[a];
            for c in 0..block {
                let mut row: Vec<(usize, C64)> = self.lattice.row(a).map(|(b, h)| (b * block + c, h)).collect();
                row.push((a * block + c, diag[c]));
                for (j, cav) in self.cavities.iter().enumerate() {
                    if (mask >> j) & 1 == 0 {
                        continue;
                    }
                    let stride = self.space.strides[j];
                    let up = -cav.chi * cav.alpha;
                    if self.lower[j][c] > 0.0 {
                        row.push((a * block + c - stride, up * self.lower[j][c]));
                    }
                    if self.raise[j][c] > 0.0 {
                        row.push((a * block + c + stride, up.conj() * self.raise[j][c]));
                    }
                }
                row.retain(|(_, v)| *v != C64::new(0.0, 0.0));
                rows.push(row);
            }
        }
        CsrMatrix::from_rows(self.dim(), rows)
    }

    pub fn jump_csr(&self, jump: &JumpOperator) -> CsrMatrix {
        let block = self.space.block();
        let stride = self.space.strides[jump.cavity];
        let s = jump.kappa.sqrt();
        let raise = &self.raise[jump.cavity];
        let rows = (0..self.dim())
            .map(|i| {
                let c = i % block;
                if raise[c] > 0.0 {
                    vec![(i + stride, C64::new(s * raise[c], 0.0))]
                } else {
                    Vec::new()
                }
            })
            .collect();
        CsrMatrix::from_rows(self.dim(), rows)
    }

    /// Photon number of cavity `j` in cavity-block position `c`.
    pub fn photons(&self, j: usize, c: usize) -> usize {
        self.photons[j][c] as usize
    }
}
