//! Eigenpairs of lattice Hamiltonians and the density matrix elements
//! between them.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::{FockBasis, SparseHermitianOperator};
use crate::linalg::lanczos::{self, LanczosOptions};
use crate::linalg::{dotc, hermitian_eigh, C64};

/// Largest dimension handed to the dense eigensolver by default.
pub const DENSE_CAP: usize = 4096;

/// Levels closer than this (in J) are treated as one multiplet.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum SolverInfo {
    Dense,
    Lanczos { tol: f64, restarts: usize, matvecs: usize },
    Given,
}

/// Ascending eigenvalues with orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct Spectrum {
    dim: usize,
    values: Vec<f64>,
    vectors: Vec<Vec<C64>>,
    residuals: Vec<f64>,
    solver: SolverInfo,
}

impl Spectrum {
    /// Wraps externally computed eigenpairs. Values must be ascending and
    /// vectors normalized.
    pub fn from_parts(values: Vec<f64>, vectors: Vec<Vec<C64>>) -> Result<Self> {
        if values.is_empty() || values.len() != vectors.len() {
            return Err(Error::domain("spectrum needs as many vectors as values, at least one"));
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::domain("eigenvectors have inconsistent lengths"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("eigenvalues must be ascending"));
        }
        let residuals = vec![0.0; values.len()];
        Ok(Spectrum { dim, values, vectors, residuals, solver: SolverInfo::Given })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, i: usize) -> &[C64] {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[Vec<C64>] {
        &self.vectors
    }

    /// Explicit residuals `|H v - e v|` recorded when the spectrum was computed.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn solver(&self) -> &SolverInfo {
        &self.solver
    }

    /// Excitation energies `e_i - e_0` for `i >= 1`.
    pub fn gaps(&self) -> Vec<f64> {
        self.values[1..].iter().map(|e| e - self.values[0]).collect()
    }

    /// Number of states degenerate with the ground state.
    pub fn ground_multiplicity(&self) -> usize {
        self.values
            .iter()
            .take_while(|&&e| e - self.values[0] < DEGENERACY_TOL)
            .count()
    }

    /// Contiguous index ranges of degenerate multiplets.
    pub fn multiplets(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.values.len() {
            if i == self.values.len() || self.values[i] - self.values[i - 1] >= DEGENERACY_TOL {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// `max |<v_a|v_b> - delta_ab|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.len() {
            for b in a..self.len() {
                let d = dotc(&self.vectors[a], &self.vectors[b]);
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - C64::new(e, 0.0)).norm());
            }
        }
        worst
    }

    /// Keeps the lowest `k` pairs.
    pub fn truncated(&self, k: usize) -> Spectrum {
        let k = k.min(self.len());
        Spectrum {
            dim: self.dim,
            values: self.values[..k].to_vec(),
            vectors: self.vectors[..k].to_vec(),
            residuals: self.residuals[..k].to_vec(),
            solver: self.solver.clone(),
        }
    }
}

fn residuals(h: &SparseHermitianOperator, values: &[f64], vectors: &[Vec<C64>], exec: Parallelism) -> Vec<f64> {
    exec.map(values.len(), |i| {
        let hv = h.matrix().apply(&vectors[i]);
        hv.iter()
            .zip(&vectors[i])
            .map(|(a, b)| (a - b * values[i]).norm_sqr())
            .sum::<f64>()
            .sqrt()
    })
}

/// All eigenpairs by dense diagonalization.
pub fn full_spectrum(h: &SparseHermitianOperator) -> Result<Spectrum> {
    full_spectrum_capped(h, DENSE_CAP)
}

pub fn full_spectrum_capped(h: &SparseHermitianOperator, cap: usize) -> Result<Spectrum> {
    let dim = h.dim();
    if dim > cap {
        return Err(Error::DimensionCap {
            dim,
            cap,
            hint: "use lowest_eigenpairs for large sectors",
        });
    }
    if dim == 0 {
        return Err(Error::domain("empty operator"));
    }
    let eig = hermitian_eigh(h.matrix().to_dense());
    let vectors: Vec<Vec<C64>> = (0..dim)
        .map(|i| eig.vectors.column(i).iter().copied().collect())
        .collect();
    let res = residuals(h, &eig.values, &vectors, Parallelism::Auto);
    Ok(Spectrum {
        dim,
        values: eig.values,
        vectors,
        residuals: res,
        solver: SolverInfo::Dense,
    })
}

/// The `k` lowest eigenpairs by thick-restart Lanczos. `tol` bounds the
/// residual relative to the operator infinity norm.
pub fn lowest_eigenpairs(h: &SparseHermitianOperator, k: usize, tol: f64) -> Result<Spectrum> {
    lowest_eigenpairs_with(h, &LanczosOptions::new(k, tol), Parallelism::Auto)
}

pub fn lowest_eigenpairs_with(
    h: &SparseHermitianOperator,
    opts: &LanczosOptions,
    exec: Parallelism,
) -> Result<Spectrum> {
    let norm = h.matrix().norm_inf();
    let res = lanczos::lowest_eigenpairs(
        h.dim(),
        |x, y| h.matrix().matvec_with(x, y, exec),
        norm,
        opts,
    )?;
    Ok(Spectrum {
        dim: h.dim(),
        values: res.values,
        vectors: res.vectors,
        residuals: res.residuals,
        solver: SolverInfo::Lanczos {
            tol: opts.tol,
            restarts: res.restarts,
            matvecs: res.matvecs,
        },
    })
}

/// `M^(j)_{ab} = <e_a|n_j|e_b>` for a list of sites.
#[derive(Clone, Debug)]
pub struct TransitionTable {
    sites: Vec<usize>,
    matrices: Vec<DMatrix<C64>>,
}

impl TransitionTable {
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// Matrix for the `i`th listed site.
    pub fn matrix(&self, i: usize) -> &DMatrix<C64> {
        &self.matrices[i]
    }

    pub fn for_site(&self, site: usize) -> Option<&DMatrix<C64>> {
        self.sites.iter().position(|&s| s == site).map(|i| &self.matrices[i])
    }

    /// Builds a table from explicit matrices.
    pub fn from_matrices(sites: Vec<usize>, matrices: Vec<DMatrix<C64>>) -> Result<Self> {
        if sites.len() != matrices.len() {
            return Err(Error::DimensionMismatch { expected: sites.len(), got: matrices.len() });
        }
        Ok(TransitionTable { sites, matrices })
    }
}

pub fn transition_table(spec: &Spectrum, basis: &FockBasis, sites: &[usize]) -> Result<TransitionTable> {
    transition_table_with(spec, basis, sites, Parallelism::Auto)
}

pub fn transition_table_with(
    spec: &Spectrum,
    basis: &FockBasis,
    sites: &[usize],
    exec: Parallelism,
) -> Result<TransitionTable> {
    if spec.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: spec.dim() });
    }
    if let Some(&s) = sites.iter().find(|&&s| s >= basis.sites()) {
        return Err(Error::domain(format!("site {s} out of range 0..{}", basis.sites())));
    }
    let k = spec.len();
    let matrices = exec.map(sites.len(), |i| {
        let occ = basis.site_occupations(sites[i]);
        let filled: Vec<usize> = (0..occ.len()).filter(|&a| occ[a] == 1.0).collect();
        let mut m = DMatrix::from_element(k, k, C64::new(0.0, 0.0));
        for a in 0..k {
            let va = spec.vector(a);
            for b in a..k {
                let vb = spec.vector(b);
                let mut acc = C64::new(0.0, 0.0);
                for &s in &filled {
                    acc += va[s].conj() * vb[s];
                }
                m[(a, b)] = acc;
                m[(b, a)] = acc.conj();
            }
            m[(a, a)] = C64::new(m[(a, a)].re, 0.0);
        }
        m
    });
    Ok(TransitionTable { sites: sites.to_vec(), matrices })
}

/// `<e_a|n_j|e_a>` for every state `a` and site `j`, indexed `[a][j]`.
pub fn site_densities(spec: &Spectrum, basis: &FockBasis) -> Result<Vec<Vec<f64>>> {
    if spec.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: spec.dim() });
    }
    Ok(Parallelism::Auto.map(spec.len(), |a| {
        let mut out = vec![0.0; basis.sites()];
        for (s, amp) in spec.vector(a).iter().enumerate() {
            let w = amp.norm_sqr();
            let mut bits = basis.pattern(s);
            while bits != 0 {
                let j = bits.trailing_zeros() as usize;
                out[j] += w;
                bits &= bits - 1;
            }
        }
        out
    }))
}

/// Identifies a cached spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumKey {
    pub l: usize,
    pub n: usize,
    pub flux: f64,
    pub j_eff: f64,
    pub potential: Vec<f64>,
    pub k: usize,
    pub tol: f64,
}

impl SpectrumKey {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.l as u64).to_le_bytes());
        h.update((self.n as u64).to_le_bytes());
        h.update(self.flux.to_le_bytes());
        h.update(self.j_eff.to_le_bytes());
        for v in &self.potential {
            h.update(v.to_le_bytes());
        }
        h.update((self.k as u64).to_le_bytes());
        h.update(self.tol.to_le_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

/// Directory of binary spectrum files named by key digest.
#[derive(Clone, Debug)]
pub struct SpectrumCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 8] = b"FCISPEC1";

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SpectrumCache { dir: dir.into() }
    }

    fn path(&self, key: &SpectrumKey) -> PathBuf {
        self.dir.join(format!("{}.spec", key.digest()))
    }

    pub fn load(&self, key: &SpectrumKey) -> Result<Option<Spectrum>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        read_spectrum(&path).map(Some)
    }

    pub fn store(&self, key: &SpectrumKey, spec: &Spectrum) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        write_spectrum(&self.path(key), spec)
    }

    /// Returns the cached spectrum or computes and stores it.
    pub fn get_or_compute(
        &self,
        key: &SpectrumKey,
        compute: impl FnOnce() -> Result<Spectrum>,
    ) -> Result<Spectrum> {
        if let Some(s) = self.load(key)? {
            return Ok(s);
        }
        let s = compute()?;
        self.store(key, &s)?;
        Ok(s)
    }
}

fn write_spectrum(path: &Path, spec: &Spectrum) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.write_u64::<LittleEndian>(spec.dim as u64)?;
    buf.write_u64::<LittleEndian>(spec.len() as u64)?;
    for i in 0..spec.len() {
        buf.write_f64::<LittleEndian>(spec.values[i])?;
        buf.write_f64::<LittleEndian>(spec.residuals[i])?;
        for z in &spec.vectors[i] {
            buf.write_f64::<LittleEndian>(z.re)?;
            buf.write_f64::<LittleEndian>(z.im)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Config(format!("{} is not a spectrum cache file", path.display())));
    }
    let dim = file.read_u64::<LittleEndian>()? as usize;
    let k = file.read_u64::<LittleEndian>()? as usize;
    let mut values = Vec::with_capacity(k);
    let mut res = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for _ in 0..k {
        values.push(file.read_f64::<LittleEndian>()?);
        res.push(file.read_f64::<LittleEndian>()?);
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            let re = file.read_f64::<LittleEndian>()?;
            let im = file.read_f64::<LittleEndian>()?;
            v.push(C64::new(re, im));
        }
        vectors.push(v);
    }
    Ok(Spectrum { dim, values, vectors, residuals: res, solver: SolverInfo::Given })
}
