use nalgebra::{DMatrix, SymmetricEigen};

use super::C64;

/// Eigenpairs of a dense Hermitian matrix, ascending.
#[derive(Clone, Debug)]
pub struct DenseEigen {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: DMatrix<C64>,
}

/// Full diagonalization of a Hermitian matrix. Only the lower triangle is
/// read, so pass a matrix that is Hermitian up to rounding.
pub fn hermitian_eigh(m: DMatrix<C64>) -> DenseEigen {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<C64> = eig.eigenvectors.column(src).iter().copied().collect();
        fix_phase(&mut col);
        vectors.column_mut(dst).copy_from_slice(&col);
    }
    DenseEigen { values, vectors }
}

/// Rotates `v` so that its largest-magnitude component is real and positive.
/// Ties go to the lowest index.
pub fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, x) in v.iter().enumerate() {
        let m = x.norm();
        if m > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = m;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let phase = v[best].conj() / best_mag;
    for x in v.iter_mut() {
        *x *= phase;
    }
    v[best] = C64::new(v[best].re, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascending_and_phase_fixed() {
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[one * 2.0, i, -i, one * 2.0]);
        let e = hermitian_eigh(m.clone());
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        for k in 0..2 {
            let col = e.vectors.column(k);
            // equal magnitudes here, so the first component carries the phase
            let lead = col[0];
            assert!(lead.im.abs() < 1e-15 && lead.re > 0.0);
            let r = &m * col - col * C64::new(e.values[k], 0.0);
            assert!(r.norm() < 1e-13);
        }
    }
}
