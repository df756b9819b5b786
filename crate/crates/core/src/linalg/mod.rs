//! Sparse and dense complex linear algebra used by the solvers.

mod csr;
mod dense;
pub mod lanczos;

pub use csr::CsrMatrix;
pub use dense::{fix_phase, hermitian_eigh, DenseEigen};

use num_complex::Complex64;

pub type C64 = Complex64;

#[inline]
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[inline]
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [C64]) {
    for v in x {
        *v *= alpha;
    }
}
