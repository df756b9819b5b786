//! Thick-restart Lanczos for the lowest eigenpairs of a Hermitian operator.
//!
//! The Krylov basis is kept fully reorthogonalized (two passes of classical
//! Gram-Schmidt). The first pass yields the projected matrix column for free.
//! At each restart the lowest Ritz vectors are kept together with the
//! continuation vector, so the projected matrix becomes diag(theta) plus one
//! coupling column.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dotc, fix_phase, hermitian_eigh, norm_sqr, C64};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub k: usize,
    /// Residual bound relative to the operator norm estimate.
    pub tol: f64,
    /// Krylov basis size; defaults to `max(2k + 32, k + 64)` capped at the dimension.
    pub max_basis: Option<usize>,
    pub max_restarts: usize,
    pub seed: u64,
}

impl LanczosOptions {
    pub fn new(k: usize, tol: f64) -> Self {
        LanczosOptions {
            k,
            tol,
            max_basis: None,
            max_restarts: 400,
            seed: 0x5eed_1a2c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    /// Explicit residuals `|H v - e v|` of the returned pairs.
    pub residuals: Vec<f64>,
    pub restarts: usize,
    pub matvecs: usize,
}

/// Computes the `k` lowest eigenpairs of the Hermitian operator `apply` of
/// dimension `n`. `norm_estimate` should bound the spectral radius (the
/// infinity norm is a safe choice).
pub fn lowest_eigenpairs<F>(n: usize, apply: F, norm_estimate: f64, opts: &LanczosOptions) -> Result<LanczosResult>
where
    F: Fn(&[C64], &mut [C64]),
{
    let k = opts.k;
    if k == 0 || k >= n {
        return Err(Error::domain(format!(
            "lowest_eigenpairs needs 1 <= k < dimension (k = {k}, dimension = {n})"
        )));
    }
    let m = opts.max_basis.unwrap_or((2 * k + 32).max(k + 64)).min(n).max(k + 2).min(n);
    let keep = if m == n { m } else { (k + (m - k) / 2).clamp(k + 1, m - 1) };
    let scale = norm_estimate.max(f64::MIN_POSITIVE);
    let threshold = opts.tol * scale;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<C64> = Vec::with_capacity(n * m);
    let mut t = DMatrix::<C64>::zeros(m, m);
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut coeff = vec![C64::new(0.0, 0.0); m];
    let mut matvecs = 0usize;

    let mut next = random_unit(n, &mut rng);
    let mut best_residual = f64::INFINITY;

    for restart in 0..=opts.max_restarts {
        let mut residual_norm = 0.0;
        while basis.len() / n < m {
            let j = basis.len() / n;
            basis.extend_from_slice(&next);
            apply(&basis[j * n..(j + 1) * n], &mut w);
            matvecs += 1;
            let cols = j + 1;
            // first pass: projections give the column of the projected matrix
            project_out(&basis, n, cols, &mut w, &mut coeff);
            for i in 0..cols {
                t[(i, j)] = coeff[i];
                t[(j, i)] = coeff[i].conj();
            }
            t[(j, j)] = C64::new(coeff[j].re, 0.0);
            project_out(&basis, n, cols, &mut w, &mut coeff);
            residual_norm = norm_sqr(&w).sqrt();
            if cols == n {
                break;
            }
            if residual_norm <= 1e-12 * scale {
                // invariant subspace; continue with a fresh direction
                let mut fresh = random_unit(n, &mut rng);
                for _ in 0..2 {
                    project_out(&basis, n, cols, &mut fresh, &mut coeff);
                }
                let norm = norm_sqr(&fresh).sqrt();
                fresh.iter_mut().for_each(|x| *x /= norm);
                next = fresh;
                residual_norm = 0.0;
            } else {
                next = w.iter().map(|x| x / residual_norm).collect();
            }
        }

        let cols = basis.len() / n;
        let eig = hermitian_eigh(t.view((0, 0), (cols, cols)).into_owned());
        let estimates: Vec<f64> = (0..cols)
            .map(|i| residual_norm * eig.vectors[(cols - 1, i)].norm())
            .collect();
        let worst = estimates[..k].iter().copied().fold(0.0, f64::max);
        best_residual = best_residual.min(worst);

        if worst <= threshold || cols == n {
            let mut values = Vec::with_capacity(k);
            let mut vectors = Vec::with_capacity(k);
            let mut residuals = Vec::with_capacity(k);
            let mut hv = vec![C64::new(0.0, 0.0); n];
            let mut explicit_ok = true;
            for i in 0..k {
                let mut v = combine(&basis, n, cols, eig.vectors.column(i).as_slice());
                let norm = norm_sqr(&v).sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                fix_phase(&mut v);
                apply(&v, &mut hv);
                matvecs += 1;
                let theta = eig.values[i];
                let r = hv
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b * theta).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                explicit_ok &= r <= threshold.max(1e-13 * scale) * 10.0;
                values.push(theta);
                vectors.push(v);
                residuals.push(r);
            }
            if explicit_ok || cols == n {
                return Ok(LanczosResult {
                    values,
                    vectors,
                    residuals,
                    restarts: restart,
                    matvecs,
                });
            }
        }

        // thick restart: keep the lowest `keep` Ritz vectors, continue from `next`
        let mut rotated = Vec::with_capacity(n * m);
        for i in 0..keep {
            rotated.extend(combine(&basis, n, cols, eig.vectors.column(i).as_slice()));
        }
        basis = rotated;
        t.fill(C64::new(0.0, 0.0));
        for i in 0..keep {
            t[(i, i)] = C64::new(eig.values[i], 0.0);
        }
        // re-orthogonalize the continuation vector against the rotated basis
        for _ in 0..2 {
            project_out(&basis, n, keep, &mut next, &mut coeff);
        }
        let norm = norm_sqr(&next).sqrt();
        next.iter_mut().for_each(|x| *x /= norm);
    }

    Err(Error::NoConvergence {
        iterations: opts.max_restarts,
        best_residual: best_residual / scale,
    })
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let norm = norm_sqr(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Classical Gram-Schmidt pass of `w` against the first `cols` basis vectors.
/// The projection coefficients are written to `coeff`.
fn project_out(basis: &[C64], n: usize, cols: usize, w: &mut [C64], coeff: &mut [C64]) {
    for i in 0..cols {
        coeff[i] = dotc(&basis[i * n..(i + 1) * n], w);
    }
    for i in 0..cols {
        let c = coeff[i];
        let v = &basis[i * n..(i + 1) * n];
        for (x, b) in w.iter_mut().zip(v) {
            *x -= c * b;
        }
    }
}

fn combine(basis: &[C64], n: usize, cols: usize, y: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n];
    for i in 0..cols {
        let c = y[i];
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        for (x, b) in out.iter_mut().zip(&basis[i * n..(i + 1) * n]) {
            *x += c * b;
        }
    }
    out
}
