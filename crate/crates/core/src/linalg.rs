//! Small dense linear algebra: a row-major matrix, LU with partial pivoting,
//! and rank-revealing row selection.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `y = selfᵀ * x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), &mut y);
            }
        }
        y
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, keep: &[usize]) -> Mat {
        let mut out = Mat::zeros(keep.len(), self.cols);
        for (dst, &src) in keep.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// LU factorization `PA = LU` with partial (row) pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl Lu {
    /// Factors a square matrix. Returns `None` when a pivot is exactly zero.
    pub fn factor(a: &Mat) -> Option<Lu> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (upper, lower) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..(k + 1) * n];
            for r in 0..(n - k - 1) {
                let row = &mut lower[r * n..(r + 1) * n];
                let f = row[k] / pivot;
                if f != 0.0 {
                    row[k] = f;
                    for c in (k + 1)..n {
                        row[c] -= f * pivot_row[c];
                    }
                } else {
                    row[k] = 0.0;
                }
            }
        }
        Some(Lu {
            n,
            lu,
            perm,
            min_pivot,
            max_pivot,
        })
    }

    /// Ratio of smallest to largest pivot magnitude; a cheap conditioning proxy.
    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot == 0.0 {
            0.0
        } else {
            self.min_pivot / self.max_pivot
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let row = &self.lu[r * n..r * n + r];
            let s = dot(row, &x[..r]);
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n..(r + 1) * n];
            let s = dot(&row[r + 1..], &x[r + 1..]);
            x[r] = (x[r] - s) / row[r];
        }
        x
    }
}

/// Indices of a maximal set of linearly independent rows, in original order.
///
/// Gaussian elimination with complete pivoting; a row is dropped when its
/// remaining pivot falls below `tol` times the largest initial entry.
pub fn independent_rows(a: &Mat, tol: f64) -> Vec<usize> {
    let (m, n) = (a.rows, a.cols);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut work = a.data.clone();
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut cols_left: Vec<usize> = (0..n).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() && !cols_left.is_empty() {
        let mut best = 0.0;
        let mut pr = 0;
        let mut pc = 0;
        for (ri, &r) in remaining.iter().enumerate() {
            for (ci, &c) in cols_left.iter().enumerate() {
                let v = work[r * n + c].abs();
                if v > best {
                    best = v;
                    pr = ri;
                    pc = ci;
                }
            }
        }
        if best <= tol * scale {
            break;
        }
        let r = remaining.swap_remove(pr);
        let c = cols_left.swap_remove(pc);
        kept.push(r);
        let pivot = work[r * n + c];
        for &o in &remaining {
            let f = work[o * n + c] / pivot;
            if f != 0.0 {
                for &cc in &cols_left {
                    work[o * n + cc] -= f * work[r * n + cc];
                }
                work[o * n + c] = 0.0;
            }
        }
    }
    kept.sort_unstable();
    kept
}

/// Row-compressed view of a matrix that is mostly zeros.
#[derive(Debug, Clone)]
pub struct SparseRows {
    cols: usize,
    starts: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(a: &Mat) -> Self {
        let mut starts = Vec::with_capacity(a.rows + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        starts.push(0);
        for r in 0..a.rows {
            for (c, &v) in a.row(r).iter().enumerate() {
                if v != 0.0 {
                    idx.push(c);
                    val.push(v);
                }
            }
            starts.push(idx.len());
        }
        SparseRows {
            cols: a.cols,
            starts,
            idx,
            val,
        }
    }

    pub fn rows(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.starts[r], self.starts[r + 1]);
        (&self.idx[s..e], &self.val[s..e])
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (i, v) = self.row(r);
        i.iter().zip(v).map(|(&c, &a)| a * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row_dot(r, x)).collect()
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                let (i, v) = self.row(r);
                for (&c, &a) in i.iter().zip(v) {
                    out[c] += a * yr;
                }
            }
        }
        out
    }

    /// `out += Σ_r w_r · g_rᵀ g_r`
    pub fn add_weighted_gram(&self, w: &[f64], out: &mut Mat) {
        for (r, &wr) in w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            let (i, v) = self.row(r);
            for (a, (&ca, &va)) in i.iter().zip(v).enumerate() {
                let s = wr * va;
                for (&cb, &vb) in i[a..].iter().zip(&v[a..]) {
                    out[(ca, cb)] += s * vb;
                }
            }
        }
        // Column indices within a row are ascending, so only the upper triangle
        // was touched. `out` must be symmetric on entry.
        let n = out.rows();
        for r in 0..n {
            for c in (r + 1)..n {
                out[(c, r)] = out[(r, c)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        let a = Mat::from_rows(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let x = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let lu = Lu::factor(&a).unwrap();
        let got = lu.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-13);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(Lu::factor(&a).is_none());
    }

    #[test]
    fn independent_rows_drops_duplicates() {
        let a = Mat::from_rows(
            4,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        );
        let keep = independent_rows(&a, 1e-10);
        assert_eq!(keep.len(), 2);
    }

    #[test]
    fn weighted_gram_matches_dense() {
        let g = Mat::from_rows(3, 3, vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0, 1.0, 1.0, 0.0]);
        let w = [0.5, 2.0, 1.5];
        let sp = SparseRows::from_dense(&g);
        let mut out = Mat::zeros(3, 3);
        sp.add_weighted_gram(&w, &mut out);
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..3).map(|r| w[r] * g[(r, i)] * g[(r, j)]).sum();
                assert!((out[(i, j)] - e).abs() < 1e-12, "({i},{j})");
            }
        }
    }
}
