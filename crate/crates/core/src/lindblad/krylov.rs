//! Arnoldi approximation of `exp(tau A) v` for a linear autonomous system.
//!
//! One basis serves every `tau` up to the accepted step, so grid
//! observations and jump-time bisection need no further matrix products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dotc, norm_sqr, C64};

/// Default Krylov subspace dimension.
pub(crate) const KRYLOV_DIM: usize = 16;

pub(crate) struct Krylov {
    basis: Vec<Vec<C64>>,
    hess: DMatrix<C64>,
    beta: f64,
    /// Subdiagonal entry below the last column; zero after an invariant subspace was found.
    residual: f64,
}

impl Krylov {
    pub fn build<F: Fn(&[C64], &mut [C64])>(apply: &F, v: &[C64], m_max: usize) -> Self {
        let n = v.len();
        let beta = norm_sqr(v).sqrt();
        let m_max = m_max.min(n).max(1);
        let zero = C64::new(0.0, 0.0);
        if beta == 0.0 {
            return Krylov { basis: vec![vec![zero; n]], hess: DMatrix::zeros(1, 1), beta, residual: 0.0 };
        }
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m_max);
        basis.push(v.iter().map(|x| x / beta).collect());
        let mut hess = DMatrix::<C64>::zeros(m_max + 1, m_max);
        let mut w = vec![zero; n];
        let mut m = m_max;
        let mut residual = 0.0;
        for j in 0..m_max {
            apply(&basis[j], &mut w);
            let scale = norm_sqr(&w).sqrt();
            for (i, q) in basis.iter().enumerate() {
                let c = dotc(q, &w);
                hess[(i, j)] = c;
                axpy(-c, q, &mut w);
            }
            let h = norm_sqr(&w).sqrt();
            if h <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                m = j + 1;
                break;
            }
            if j + 1 == m_max {
                residual = h;
                break;
            }
            hess[(j + 1, j)] = C64::new(h, 0.0);
            basis.push(w.iter().map(|x| x / h).collect());
        }
        let hess = hess.view((0, 0), (m, m)).into_owned();
        Krylov { basis, hess, beta, residual }
    }

    pub fn dim(&self) -> usize {
        self.hess.nrows()
    }

    /// Coordinates of `exp(tau A) v` in the Krylov basis.
    pub fn coeffs(&self, tau: f64) -> DVector<C64> {
        let e = (&self.hess * C64::new(tau, 0.0)).exp();
        e.column(0) * C64::new(self.beta, 0.0)
    }

    /// A posteriori estimate of the absolute error of `coeffs(tau)`.
    pub fn error(&self, tau: f64, c: &DVector<C64>) -> f64 {
        self.residual * tau * c[c.len() - 1].norm()
    }

    pub fn state(&self, c: &DVector<C64>, out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for (q, ci) in self.basis.iter().zip(c.iter()) {
            axpy(*ci, q, out);
        }
    }

    /// Largest step up to `limit` meeting the relative tolerance, starting from `guess`.
    /// Returns the step, its coefficients and the error ratio.
    pub fn accept_step(&self, guess: f64, limit: f64, rtol: f64, time: f64) -> Result<(f64, DVector<C64>, f64)> {
        let m = self.dim() as f64;
        let mut tau = guess.min(limit);
        loop {
            let c = self.coeffs(tau);
            let ratio = self.error(tau, &c) / (rtol * self.beta).max(f64::MIN_POSITIVE);
            if ratio <= 1.0 {
                return Ok((tau, c, ratio));
            }
            tau *= (0.9 * ratio.powf(-1.0 / m)).clamp(0.1, 0.9);
            if tau <= 1e-12 * (1.0 + time) {
                return Err(Error::Integrator { time, reason: "step size underflow".into() });
            }
        }
    }
}

/// Step proposal after an accepted step with error ratio `ratio`.
pub(crate) fn grow(tau: f64, ratio: f64, m: usize) -> f64 {
    if ratio == 0.0 {
        4.0 * tau
    } else {
        tau * (0.9 * ratio.powf(-1.0 / m as f64)).clamp(0.5, 4.0)
    }
}
