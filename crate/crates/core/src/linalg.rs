//! Small dense helpers shared by the subspace, distance and lifting code.
//!
//! Matrices whose rows are vectors of the ambient space (bases, normal sets,
//! descriptor sets) are kept in [`RowMatrix`], a flat row-major buffer. Larger
//! factorizations go through `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default rank tolerance for [`orthonormalize`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// An empty matrix with a fixed row width, to be filled with [`push_row`](Self::push_row).
    pub fn with_cols(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut out = Self::with_cols(cols);
        for r in rows {
            out.push_row(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * v` for a vector of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ * c` for a coefficient vector of length `rows`.
    pub fn tr_mul_vec(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &ci) in self.iter_rows().zip(c) {
            axpy(ci, r, &mut out);
        }
        out
    }

    /// `‖A Aᵀ − I‖_max`.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.row(i), self.row(j)) - target).abs());
            }
        }
        worst
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Orthonormal basis for the span of `vectors`, computed by modified
/// Gram–Schmidt with largest-residual pivoting and one re-orthogonalization
/// pass per accepted direction.
///
/// A candidate is dropped once its residual norm falls below
/// `tol * max_input_norm`, so the returned row count is the numerical rank.
pub fn orthonormalize<R: AsRef<[f64]>>(vectors: &[R], tol: f64) -> Result<RowMatrix> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidDimension("no vectors to orthonormalize".into()))?;
    let n = first.as_ref().len();
    let mut work: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let v = v.as_ref();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        work.push(v.to_vec());
    }
    let max_norm = work.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if max_norm < tol {
        return Err(Error::AllVectorsDegenerate);
    }
    let cutoff = tol * max_norm;

    let mut out = RowMatrix::with_cols(n);
    while !work.is_empty() && out.rows() < n {
        let (best, best_norm) = work
            .iter()
            .enumerate()
            .map(|(i, v)| (i, norm(v)))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_norm < cutoff {
            break;
        }
        let mut q = work.swap_remove(best);
        for o in out.iter_rows() {
            let c = dot(o, &q);
            axpy(-c, o, &mut q);
        }
        let qn = norm(&q);
        if qn < cutoff {
            continue;
        }
        q.iter_mut().for_each(|x| *x /= qn);
        for v in work.iter_mut() {
            let c = dot(&q, v);
            axpy(-c, &q, v);
        }
        out.push_row(&q)?;
    }
    Ok(out)
}

/// Orthonormal basis (as rows) of the orthogonal complement of the row space
/// of `rows`, which must have full row rank.
///
/// Uses a Householder QR of `rowsᵀ`; the trailing columns of `Q` span the
/// complement. Cost is `O(n · k · (n − k))` for `k` input rows.
pub fn orthogonal_complement(rows: &RowMatrix) -> RowMatrix {
    let n = rows.cols();
    let k = rows.rows();
    // Columns of rowsᵀ are the input rows.
    let mut cols: Vec<Vec<f64>> = rows.iter_rows().map(|r| r.to_vec()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = &cols[j][j..];
        let xn = norm(x);
        let mut v = x.to_vec();
        let alpha = if x[0] >= 0.0 { -xn } else { xn };
        v[0] -= alpha;
        let vn = norm(&v);
        if vn > 0.0 {
            v.iter_mut().for_each(|e| *e /= vn);
        }
        for c in cols.iter_mut().skip(j) {
            let s = 2.0 * dot(&v, &c[j..]);
            axpy(-s, &v, &mut c[j..]);
        }
        reflectors.push(v);
    }
    let mut out = RowMatrix::zeros(n - k, n);
    for i in k..n {
        let e = out.row_mut(i - k);
        e[i] = 1.0;
        for (j, v) in reflectors.iter().enumerate().rev() {
            let s = 2.0 * dot(v, &e[j..]);
            axpy(-s, v, &mut e[j..]);
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b` via the SVD; singular
/// values below `rel_tol * σ_max` are treated as zero.
pub fn lstsq_min_norm(a: DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let scale = a.norm();
    if scale == 0.0 {
        return DVector::zeros(a.ncols());
    }
    // The implicit-shift SVD occasionally returns a factorization that does
    // not reproduce its input on rank-deficient matrices; the transpose is
    // tried before giving up on accuracy.
    let direct = a.clone().svd(true, true);
    let (u, s, v_t) = if svd_error(&direct, &a) <= 1e-10 * scale {
        (direct.u.unwrap(), direct.singular_values, direct.v_t.unwrap())
    } else {
        let tr = a.transpose().svd(true, true);
        if svd_error(&tr, &a.transpose()) <= svd_error(&direct, &a) {
            (tr.v_t.unwrap().transpose(), tr.singular_values, tr.u.unwrap().transpose())
        } else {
            (direct.u.unwrap(), direct.singular_values, direct.v_t.unwrap())
        }
    };
    let cut = rel_tol * s.max();
    let mut ub = u.tr_mul(b);
    for (c, &sv) in ub.iter_mut().zip(s.iter()) {
        *c = if sv > cut { *c / sv } else { 0.0 };
    }
    v_t.tr_mul(&ub)
}

/// Minimum-norm solution of a symmetric system through its eigendecomposition,
/// discarding eigenvalues below `rel_tol` times the largest magnitude.
pub fn symmetric_min_norm(a: DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let eig = a.symmetric_eigen();
    let cut = rel_tol * eig.eigenvalues.amax();
    let mut qb = eig.eigenvectors.tr_mul(b);
    for (c, &ev) in qb.iter_mut().zip(eig.eigenvalues.iter()) {
        *c = if ev.abs() > cut && ev.abs() > 0.0 { *c / ev } else { 0.0 };
    }
    &eig.eigenvectors * qb
}

fn svd_error(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, a: &DMatrix<f64>) -> f64 {
    match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => {
            let us = u * DMatrix::from_diagonal(&svd.singular_values);
            (us * v_t - a).norm()
        }
        _ => f64::INFINITY,
    }
}

/// Cholesky-based inverse of a small symmetric positive definite matrix
/// stored row-major, together with its 1-norm condition number.
/// Returns `None` when the factorization breaks down.
pub(crate) fn spd_inverse(a: &[f64], m: usize) -> Option<(Vec<f64>, f64)> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for p in 0..j {
                s -= l[i * m + p] * l[j * m + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    // Invert L, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut li = vec![0.0; m * m];
    for i in 0..m {
        li[i * m + i] = 1.0 / l[i * m + i];
        for j in 0..i {
            let mut s = 0.0;
            for p in j..i {
                s += l[i * m + p] * li[p * m + j];
            }
            li[i * m + j] = -s / l[i * m + i];
        }
    }
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = 0.0;
            for p in i..m {
                s += li[p * m + i] * li[p * m + j];
            }
            inv[i * m + j] = s;
            inv[j * m + i] = s;
        }
    }
    let one_norm = |x: &[f64]| {
        (0..m)
            .map(|j| (0..m).map(|i| x[i * m + j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = one_norm(a) * one_norm(&inv);
    Some((inv, cond))
}
