//! Monte Carlo wave-function unraveling.
//!
//! Each trajectory evolves under the non-Hermitian drift until its squared
//! norm falls below a uniform variate drawn in advance; the drift is
//! propagated with Krylov exponentials and the crossing time is
//! refined by bisection and a jump channel is chosen with probability
//! proportional to `kappa_j |c_j psi|^2`.

use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::krylov::{grow, Krylov, KRYLOV_DIM};
use super::{Drift, EffectiveHamiltonian, JumpOperator};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::FockBasis;
use crate::linalg::{norm_sqr, C64};
use crate::spectra::Spectrum;

/// Draws initial lattice states; cavities always start in the displaced vacuum.
pub trait StateSampler: Sync {
    fn lattice_dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<C64>;
}

/// Uniformly random Fock configuration.
#[derive(Clone, Debug)]
pub struct InfiniteTemperature {
    dim: usize,
}

impl InfiniteTemperature {
    pub fn new(basis: &FockBasis) -> Self {
        InfiniteTemperature { dim: basis.dim() }
    }
}

impl StateSampler for InfiniteTemperature {
    fn lattice_dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim];
        v[rng.random_range(0..self.dim)] = C64::new(1.0, 0.0);
        v
    }
}

#[derive(Clone, Debug)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n = norm_sqr(&amplitudes);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("initial state has squared norm {n}")));
        }
        Ok(PureState { amplitudes })
    }
}

impl StateSampler for PureState {
    fn lattice_dim(&self) -> usize {
        self.amplitudes.len()
    }

    fn sample(&self, _: &mut ChaCha8Rng) -> Vec<C64> {
        self.amplitudes.clone()
    }
}

/// Eigenstate drawn with the given probabilities.
#[derive(Clone, Debug)]
pub struct EigenMixture {
    vectors: Vec<Vec<C64>>,
    cumulative: Vec<f64>,
}

impl EigenMixture {
    pub fn new(spec: &Spectrum, weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.len() > spec.len() {
            return Err(Error::domain("mixture weights must cover 1..=k eigenstates"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("mixture weights sum to zero"));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(EigenMixture {
            vectors: spec.vectors()[..weights.len()].to_vec(),
            cumulative,
        })
    }
}

impl StateSampler for EigenMixture {
    fn lattice_dim(&self) -> usize {
        self.vectors[0].len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let u: f64 = rng.random();
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.vectors.len() - 1);
        self.vectors[i].clone()
    }
}

/// Lattice observable recorded along the trajectories.
#[derive(Clone, Debug)]
pub enum Probe {
    /// Diagonal in the Fock basis, with one value per configuration.
    Diagonal { name: String, values: Vec<f64> },
    /// Weight of the reduced lattice state on the span of orthonormal vectors.
    Projector { name: String, vectors: Vec<Vec<C64>> },
}

impl Probe {
    pub fn name(&self) -> &str {
        match self {
            Probe::Diagonal { name, .. } | Probe::Projector { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryOptions {
    pub times: Vec<f64>,
    pub n_traj: usize,
    pub seed: u64,
    pub rtol: f64,
    pub probes: Vec<Probe>,
    /// Resumable progress file.
    pub checkpoint: Option<PathBuf>,
    pub exec: Parallelism,
}

pub const DEFAULT_TRAJECTORIES: usize = 200;
pub const DEFAULT_GRID: usize = 400;

/// Trajectories handled by one work item; fixes the summation order.
const CHUNK: usize = 4;
/// Chunks between checkpoint writes.
const BATCH: usize = 16;

impl TrajectoryOptions {
    pub fn new(t_final: f64, n_traj: usize, seed: u64) -> Self {
        TrajectoryOptions {
            times: uniform_grid(t_final, DEFAULT_GRID),
            n_traj,
            seed,
            rtol: 1e-8,
            probes: Vec::new(),
            checkpoint: None,
            exec: Parallelism::Auto,
        }
    }
}

/// `points` equally spaced times from 0 to `t_final` inclusive.
pub fn uniform_grid(t_final: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![t_final],
        _ => (0..points)
            .map(|i| t_final * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Ensemble means and standard errors, `[observable][time]`.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub seed: u64,
    pub jumps: u64,
}

/// Highest-level cavity population that still counts as converged truncation.
pub const TRUNCATION_LIMIT: f64 = 1e-4;

impl TrajectoryEnsemble {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Mean and standard error of one observable.
    pub fn series(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.index(name).map(|i| (&self.mean[i][..], &self.stderr[i][..]))
    }

    /// Largest mean population of any cavity's top Fock level.
    pub fn max_top_population(&self) -> f64 {
        self.names
            .iter()
            .zip(&self.mean)
            .filter(|(n, _)| n.starts_with("top_"))
            .flat_map(|(_, v)| v.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn truncation_ok(&self) -> bool {
        self.max_top_population() < TRUNCATION_LIMIT
    }
}

struct Runner<'a> {
    h: &'a EffectiveHamiltonian,
    jumps: &'a [JumpOperator],
    probes: &'a [Probe],
    times: &'a [f64],
    rtol: f64,
    n_obs: usize,
}

impl Runner<'_> {
    fn rhs(&self, x: &[C64], y: &mut [C64]) {
        self.h.apply(x, y, Drift::NonHermitian);
        for v in y.iter_mut() {
            *v = C64::new(v.im, -v.re);
        }
    }

    fn observe(&self, psi: &[C64], out: &mut [f64], slot: usize) {
        let space = self.h.space();
        let block = space.block();
        let n2 = norm_sqr(psi);
        let nt = self.times.len();
        let mut col = 0;
        for probe in self.probes {
            let v = match probe {
                Probe::Diagonal { values, .. } => psi
                    .chunks(block)
                    .zip(values)
                    .map(|(b, w)| w * norm_sqr(b))
                    .sum::<f64>(),
                Probe::Projector { vectors, .. } => {
                    let mut total = 0.0;
                    let mut acc = vec![C64::new(0.0, 0.0); block];
                    for v in vectors {
                        acc.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
                        for (a, b) in psi.chunks(block).enumerate() {
                            let w = v[a].conj();
                            if w != C64::new(0.0, 0.0) {
                                for (x, y) in acc.iter_mut().zip(b) {
                                    *x += w * y;
                                }
                            }
                        }
                        total += norm_sqr(&acc);
                    }
                    total
                }
            };
            out[col * nt + slot] = v / n2;
            col += 1;
        }
        for j in 0..space.cavities() {
            let top = space.levels()[j] - 1;
            let mut photons = 0.0;
            let mut top_pop = 0.0;
            for b in psi.chunks(block) {
                for (c, x) in b.iter().enumerate() {
                    let q = self.h.photons(j, c);
                    let w = x.norm_sqr();
                    photons += q as f64 * w;
                    if q == top {
                        top_pop += w;
                    }
                }
            }
            out[col * nt + slot] = photons / n2;
            out[(col + 1) * nt + slot] = top_pop / n2;
            col += 2;
        }
    }

    fn jump(&self, psi: &mut Vec<C64>, u: f64, t: f64) -> Result<()> {
        let mut candidates = Vec::with_capacity(self.jumps.len());
        let mut total = 0.0;
        for j in self.jumps {
            let mut out = vec![C64::new(0.0, 0.0); psi.len()];
            self.h.apply_jump(j, psi, &mut out);
            let w = norm_sqr(&out);
            total += w;
            candidates.push((w, out));
        }
        if !(total > 0.0) {
            return Err(Error::Integrator { time: t, reason: "jump requested with zero jump rate".into() });
        }
        let mut target = u * total;
        let last = candidates.len() - 1;
        for (i, (w, out)) in candidates.into_iter().enumerate() {
            if target < w || i == last {
                let n = w.sqrt();
                *psi = out.into_iter().map(|x| x / n).collect();
                return Ok(());
            }
            target -= w;
        }
        unreachable!()
    }

    fn trajectory(&self, sampler: &dyn StateSampler, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<u64> {
        let space = self.h.space();
        let f = |x: &[C64], y: &mut [C64]| self.rhs(x, y);
        let mut psi = space.embed_vacuum(&sampler.sample(rng));
        let mut scratch = vec![C64::new(0.0, 0.0); psi.len()];
        let mut threshold: f64 = rng.random();
        let mut t = 0.0;
        let mut guess = 1.0f64;
        let mut next = 0;
        let mut jumps = 0u64;
        let t_end = *self.times.last().unwrap_or(&0.0);
        while next < self.times.len() && self.times[next] <= 0.0 {
            self.observe(&psi, out, next);
            next += 1;
        }
        while next < self.times.len() {
            let kr = Krylov::build(&f, &psi, KRYLOV_DIM);
            let limit = t_end - t;
            let (tau, c, ratio) = kr.accept_step(guess, limit, self.rtol, t)?;
            let n2 = c.norm_squared();
            if n2 > 1.0 + 1e-8 {
                return Err(Error::Integrator { time: t, reason: format!("norm grew to {n2}") });
            }
            let jumped = n2 <= threshold;
            let step = if jumped {
                let (mut lo, mut hi) = (0.0, tau);
                while hi - lo > 1e-10 * hi {
                    let mid = 0.5 * (lo + hi);
                    if kr.coeffs(mid).norm_squared() > threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            } else {
                tau
            };
            let end = if !jumped && tau == limit { t_end } else { t + step };
            while next < self.times.len() && self.times[next] <= end {
                kr.state(&kr.coeffs(self.times[next] - t), &mut scratch);
                self.observe(&scratch, out, next);
                next += 1;
            }
            kr.state(&kr.coeffs(step), &mut psi);
            t = end;
            if jumped {
                let u: f64 = rng.random();
                self.jump(&mut psi, u, t)?;
                jumps += 1;
                threshold = rng.random();
            }
            if tau < limit || jumped {
                guess = grow(tau, ratio, kr.dim());
            }
        }
        Ok(jumps)
    }
}

/// Propagates `psi` under the non-Hermitian drift alone, without jumps.
pub fn evolve_state(h: &EffectiveHamiltonian, psi: &[C64], t: f64, rtol: f64) -> Result<Vec<C64>> {
    if psi.len() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), got: psi.len() });
    }
    if !(t >= 0.0) {
        return Err(Error::domain("propagation time must be >= 0"));
    }
    let f = |x: &[C64], y: &mut [C64]| {
        h.apply(x, y, Drift::NonHermitian);
        for v in y.iter_mut() {
            *v = C64::new(v.im, -v.re);
        }
    };
    let mut y = psi.to_vec();
    let (mut now, mut guess) = (0.0, 1.0f64);
    while now < t {
        let kr = Krylov::build(&f, &y, KRYLOV_DIM);
        let (tau, c, ratio) = kr.accept_step(guess, t - now, rtol, now)?;
        kr.state(&c, &mut y);
        now = if tau == t - now { t } else { now + tau };
        guess = grow(tau, ratio, kr.dim());
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
struct Sums {
    s1: Vec<f64>,
    s2: Vec<f64>,
    jumps: u64,
}

impl Sums {
    fn zeros(n: usize) -> Self {
        Sums { s1: vec![0.0; n], s2: vec![0.0; n], jumps: 0 }
    }

    fn absorb(&mut self, other: &Sums) {
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += b;
        }
        self.jumps += other.jumps;
    }
}

/// Runs `opts.n_traj` trajectories and averages the probes.
///
/// Trajectory `i` uses ChaCha stream `i` of `opts.seed`, so results do not
/// depend on the execution policy or on checkpoint resumption.
pub fn run_trajectories(
    h: &EffectiveHamiltonian,
    jumps: &[JumpOperator],
    sampler: &dyn StateSampler,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryEnsemble> {
    if sampler.lattice_dim() != h.space().lattice_dim() {
        return Err(Error::DimensionMismatch { expected: h.space().lattice_dim(), got: sampler.lattice_dim() });
    }
    if opts.n_traj == 0 {
        return Err(Error::domain("need at least one trajectory"));
    }
    if opts.times.is_empty() || opts.times.windows(2).any(|w| w[1] < w[0]) || opts.times[0] < 0.0 {
        return Err(Error::domain("record times must be nonnegative and nondecreasing"));
    }
    if !(opts.times.last().copied().unwrap_or(0.0) > 0.0) {
        return Err(Error::domain("final time must be positive"));
    }
    let lattice_dim = h.space().lattice_dim();
    for p in &opts.probes {
        let ok = match p {
            Probe::Diagonal { values, .. } => values.len() == lattice_dim,
            Probe::Projector { vectors, .. } => vectors.iter().all(|v| v.len() == lattice_dim),
        };
        if !ok {
            return Err(Error::domain(format!("probe {} does not match the lattice dimension", p.name())));
        }
    }

    let mut names: Vec<String> = opts.probes.iter().map(|p| p.name().to_string()).collect();
    for j in 0..h.space().cavities() {
        names.push(format!("photons_{j}"));
        names.push(format!("top_{j}"));
    }
    let runner = Runner {
        h,
        jumps,
        probes: &opts.probes,
        times: &opts.times,
        rtol: opts.rtol,
        n_obs: names.len(),
    };
    let width = runner.n_obs * opts.times.len();
    let n_chunks = opts.n_traj.div_ceil(CHUNK);
    let fingerprint = fingerprint(h.dim(), opts, &names);

    let (mut total, mut done) = match &opts.checkpoint {
        Some(path) if path.exists() => load_checkpoint(path, fingerprint, width)?,
        _ => (Sums::zeros(width), 0),
    };

    while done < n_chunks {
        let batch = BATCH.min(n_chunks - done);
        let results = opts.exec.try_map(batch, |b| {
            let chunk = done + b;
            let mut sums = Sums::zeros(width);
            let mut values = vec![0.0; width];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(opts.n_traj) {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(i as u64);
                sums.jumps += runner
                    .trajectory(sampler, &mut rng, &mut values)
                    .map_err(|e| e.context(format!("trajectory {i}")))?;
                for (k, v) in values.iter().enumerate() {
                    sums.s1[k] += v;
                    sums.s2[k] += v * v;
                }
            }
            Ok::<_, Error>(sums)
        })?;
        for r in &results {
            total.absorb(r);
        }
        done += batch;
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(path, fingerprint, done, &total)?;
        }
    }

    let n = opts.n_traj as f64;
    let nt = opts.times.len();
    let mut mean = Vec::with_capacity(runner.n_obs);
    let mut stderr = Vec::with_capacity(runner.n_obs);
    for o in 0..runner.n_obs {
        let m: Vec<f64> = (0..nt).map(|t| total.s1[o * nt + t] / n).collect();
        let s: Vec<f64> = (0..nt)
            .map(|t| {
                if opts.n_traj < 2 {
                    return 0.0;
                }
                let var = (total.s2[o * nt + t] - n * m[t] * m[t]) / (n - 1.0);
                (var.max(0.0) / n).sqrt()
            })
            .collect();
        mean.push(m);
        stderr.push(s);
    }
    Ok(TrajectoryEnsemble {
        times: opts.times.clone(),
        names,
        mean,
        stderr,
        n_traj: opts.n_traj,
        seed: opts.seed,
        jumps: total.jumps,
    })
}

fn fingerprint(dim: usize, opts: &TrajectoryOptions, names: &[String]) -> u64 {
    let mut h = Sha256::new();
    h.update((dim as u64).to_le_bytes());
    h.update((opts.n_traj as u64).to_le_bytes());
    h.update(opts.seed.to_le_bytes());
    h.update(opts.rtol.to_le_bytes());
    h.update((CHUNK as u64).to_le_bytes());
    for t in &opts.times {
        h.update(t.to_le_bytes());
    }
    for n in names {
        h.update(n.as_bytes());
        h.update([0]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FCITRAJ1";

fn save_checkpoint(path: &PathBuf, fingerprint: u64, done: usize, sums: &Sums) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 16 * sums.s1.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.write_u64::<LittleEndian>(fingerprint)?;
    buf.write_u64::<LittleEndian>(done as u64)?;
    buf.write_u64::<LittleEndian>(sums.jumps)?;
    buf.write_u64::<LittleEndian>(sums.s1.len() as u64)?;
    for v in sums.s1.iter().chain(&sums.s2) {
        buf.write_f64::<LittleEndian>(*v)?;
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn load_checkpoint(path: &PathBuf, fingerprint: u64, width: usize) -> Result<(Sums, usize)> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Config(format!("{} is not a trajectory checkpoint", path.display())));
    }
    if file.read_u64::<LittleEndian>()? != fingerprint {
        return Err(Error::Config(format!(
            "checkpoint {} belongs to a different run; remove it to start over",
            path.display()
        )));
    }
    let done = file.read_u64::<LittleEndian>()? as usize;
    let jumps = file.read_u64::<LittleEndian>()?;
    let len = file.read_u64::<LittleEndian>()? as usize;
    if len != width {
        return Err(Error::Config("checkpoint layout mismatch".into()));
    }
    let mut read = |n: usize| -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(file.read_f64::<LittleEndian>()?)).collect()
    };
    let s1 = read(len)?;
    let s2 = read(len)?;
    Ok((Sums { s1, s2, jumps }, done))
}
