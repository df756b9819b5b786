use nalgebra::DMatrix;

use super::C64;
use crate::exec::Parallelism;

/// Square complex matrix in compressed sparse row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(dim: usize) -> Self {
        CsrMatrix {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![C64::new(1.0, 0.0); dim])
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        CsrMatrix {
            dim: diag.len(),
            row_ptr: (0..=diag.len()).collect(),
            cols: (0..diag.len()).collect(),
            vals: diag.to_vec(),
        }
    }

    /// Builds from per-row entry lists. Duplicate columns within a row are
    /// summed; columns are sorted.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, C64)>>) -> Self {
        assert_eq!(rows.len(), dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < dim, "column {c} out of range {dim}");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut rows = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            rows[r].push((c, v));
        }
        Self::from_rows(dim, rows)
    }

    pub fn from_dense(m: &DMatrix<C64>, drop_below: f64) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let rows = (0..m.nrows())
            .map(|r| {
                (0..m.ncols())
                    .filter(|&c| m[(r, c)].norm() > drop_below)
                    .map(|c| (c, m[(r, c)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.nrows(), rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row_dot(r, x);
        }
    }

    pub fn matvec_with(&self, x: &[C64], y: &mut [C64], exec: Parallelism) {
        exec.for_each_mut(y, |r, yr| *yr = self.row_dot(r, x));
    }

    #[inline]
    fn row_dot(&self, r: usize, x: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.vals[k] * x[self.cols[k]];
        }
        acc
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.matvec(x, &mut y);
        y
    }

    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                rows[c].push((r, v.conj()));
            }
        }
        Self::from_rows(self.dim, rows)
    }

    /// Entrywise `max |A - B|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            let mut a = self.row(r).peekable();
            let mut b = other.row(r).peekable();
            loop {
                let d = match (a.peek().copied(), b.peek().copied()) {
                    (None, None) => break,
                    (Some((ca, va)), Some((cb, vb))) => {
                        if ca == cb {
                            a.next();
                            b.next();
                            (va - vb).norm()
                        } else if ca < cb {
                            a.next();
                            va.norm()
                        } else {
                            b.next();
                            vb.norm()
                        }
                    }
                    (Some((_, va)), None) => {
                        a.next();
                        va.norm()
                    }
                    (None, Some((_, vb))) => {
                        b.next();
                        vb.norm()
                    }
                };
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// Infinity norm; an upper bound on the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn map_values(&self, mut f: impl FnMut(usize, usize, C64) -> C64) -> Self {
        let mut out = self.clone();
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] = f(r, self.cols[k], self.vals[k]);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.linear_combination(C64::new(1.0, 0.0), other, C64::new(1.0, 0.0))
    }

    /// `a*self + b*other`.
    pub fn linear_combination(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!(self.dim, other.dim);
        let rows = (0..self.dim)
            .map(|r| {
                self.row(r)
                    .map(|(c, v)| (c, a * v))
                    .chain(other.row(r).map(|(c, v)| (c, b * v)))
                    .collect()
            })
            .collect();
        Self::from_rows(self.dim, rows)
    }

    /// Sparse product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let rows = (0..self.dim)
            .map(|r| {
                let mut acc: Vec<(usize, C64)> = Vec::new();
                for (k, a) in self.row(r) {
                    for (c, b) in other.row(k) {
                        acc.push((c, a * b));
                    }
                }
                acc
            })
            .collect();
        Self::from_rows(self.dim, rows)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(self.dim, self.dim, C64::new(0.0, 0.0));
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}
