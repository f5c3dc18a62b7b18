//! Point-to-subspace and subspace-to-subspace distances, in primal and dual
//! form, and the batched all-pairs distance matrix.
//!
//! For two primal subspaces `d0 + span(D)` and `e0 + span(E)` with orthonormal
//! rows, the closest pair `x* = d0 + Dᵀα`, `y* = e0 + Eᵀβ` solves
//!
//! ```text
//! [ I    −G ] [α]   [D r]
//! [ Gᵀ   −I ] [β] = [E r]      G = D Eᵀ,  r = e0 − d0
//! ```
//!
//! The fast path eliminates `β` through `N = I − G Gᵀ`; the general path takes
//! the minimum-norm least-squares solution so parallel and intersecting
//! subspaces never fail.

use nalgebra::{DMatrix, DVector};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, lstsq_min_norm, spd_inverse, symmetric_min_norm, RowMatrix};
use crate::subspace::{check_len, AffineSubspace, ClosestPair, DualSubspace, PairCoefficients};

/// Condition estimate of `N` above which the fast path refuses to solve.
pub const NEAR_SINGULAR_COND: f64 = 1e12;
/// Distances at or below this count as an intersection (collision).
pub const DEFAULT_TAU_INTERSECT: f64 = 1e-6;
/// Relative singular-value cutoff of the minimum-norm solves.
const LSTSQ_REL_TOL: f64 = 1e-12;
/// Batched entries whose squared distance falls below this fraction of the
/// magnitudes involved are recomputed explicitly, where the expanded Gram
/// form loses digits to cancellation.
const RECOMPUTE_REL: f64 = 1e-6;

/// `‖e − p(e)‖` for the orthogonal projection `p` onto `sub`.
pub fn point_to_subspace(sub: &AffineSubspace, e: &[f64]) -> Result<f64> {
    check_len(sub.dim(), e)?;
    let mut r = linalg::sub(e, sub.origin());
    for row in sub.basis().iter_rows() {
        let c = dot(row, &r);
        linalg::axpy(-c, row, &mut r);
    }
    Ok(linalg::norm(&r))
}

/// `‖A (e − d0)‖`, one dot product per normal.
pub fn point_to_subspace_dual(sub: &DualSubspace, e: &[f64]) -> Result<f64> {
    check_len(sub.dim(), e)?;
    let r = linalg::sub(e, sub.origin());
    Ok(sub
        .normals()
        .iter_rows()
        .map(|a| dot(a, &r).powi(2))
        .sum::<f64>()
        .sqrt())
}

struct PairSystem {
    /// `D Eᵀ`, row-major `m_d × m_e`.
    g: Vec<f64>,
    dr: Vec<f64>,
    er: Vec<f64>,
}

fn pair_system(d: &AffineSubspace, e: &AffineSubspace) -> Result<PairSystem> {
    if d.dim() != e.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            found: e.dim(),
        });
    }
    let r = linalg::sub(e.origin(), d.origin());
    let mut g = Vec::with_capacity(d.subspace_dim() * e.subspace_dim());
    for di in d.basis().iter_rows() {
        for ej in e.basis().iter_rows() {
            g.push(dot(di, ej));
        }
    }
    Ok(PairSystem {
        g,
        dr: d.basis().mul_vec(&r),
        er: e.basis().mul_vec(&r),
    })
}

fn assemble(d: &AffineSubspace, e: &AffineSubspace, alpha: Vec<f64>, beta: Vec<f64>) -> ClosestPair {
    let x_star = d.point_at(&alpha);
    let y_star = e.point_at(&beta);
    let distance = linalg::dist(&x_star, &y_star);
    ClosestPair {
        x_star,
        y_star,
        distance,
        coefficients: PairCoefficients::Primal { alpha, beta },
    }
}

/// Closest pair between two primal subspaces by a minimum-norm least-squares
/// solve of the full `(m_d + m_e)` system. Works for any relative position,
/// including parallel and intersecting subspaces, and for unequal dimensions.
pub fn subspace_to_subspace(d: &AffineSubspace, e: &AffineSubspace) -> Result<ClosestPair> {
    let sys = pair_system(d, e)?;
    let (md, me) = (d.subspace_dim(), e.subspace_dim());
    let size = md + me;
    let mut k = DMatrix::<f64>::zeros(size, size);
    for i in 0..md {
        k[(i, i)] = 1.0;
        for j in 0..me {
            k[(i, md + j)] = -sys.g[i * me + j];
            k[(md + j, i)] = -sys.g[i * me + j];
        }
    }
    for j in 0..me {
        k[(md + j, md + j)] = 1.0;
    }
    // Second block row negated: the system becomes symmetric positive
    // semidefinite with eigenvalues 1 ± cos of the principal angles.
    let rhs = DVector::from_iterator(size, sys.dr.iter().copied().chain(sys.er.iter().map(|v| -v)));
    let sol = symmetric_min_norm(k, &rhs, LSTSQ_REL_TOL);
    let alpha = sol.as_slice()[..md].to_vec();
    let beta = sol.as_slice()[md..].to_vec();
    Ok(assemble(d, e, alpha, beta))
}

/// Solves for `(α, β)` through `N = I − G Gᵀ`:
/// `α = N⁻¹ (Dr − G Er)`, `β = Gᵀ α − Er`.
fn block_solve(g: &[f64], dr: &[f64], er: &[f64], md: usize, me: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut nmat = vec![0.0; md * md];
    for i in 0..md {
        for j in 0..=i {
            let mut s = 0.0;
            for p in 0..me {
                s += g[i * me + p] * g[j * me + p];
            }
            let v = if i == j { 1.0 - s } else { -s };
            nmat[i * md + j] = v;
            nmat[j * md + i] = v;
        }
    }
    let (ninv, cond) = spd_inverse(&nmat, md).ok_or(Error::NearSingular(f64::INFINITY))?;
    if !(cond <= NEAR_SINGULAR_COND) {
        return Err(Error::NearSingular(cond));
    }
    let rhs: Vec<f64> = (0..md)
        .map(|i| dr[i] - (0..me).map(|p| g[i * me + p] * er[p]).sum::<f64>())
        .collect();
    let alpha: Vec<f64> = (0..md)
        .map(|i| (0..md).map(|j| ninv[i * md + j] * rhs[j]).sum())
        .collect();
    let beta: Vec<f64> = (0..me)
        .map(|p| (0..md).map(|i| g[i * me + p] * alpha[i]).sum::<f64>() - er[p])
        .collect();
    Ok((alpha, beta))
}

/// Closest pair through block-matrix inversion of the orthonormal system.
/// Fails with [`Error::NearSingular`] when the condition estimate of
/// `N = I − G Gᵀ` exceeds [`NEAR_SINGULAR_COND`]; callers then fall back to
/// [`subspace_to_subspace`].
pub fn subspace_to_subspace_fast(d: &AffineSubspace, e: &AffineSubspace) -> Result<ClosestPair> {
    let sys = pair_system(d, e)?;
    let (md, me) = (d.subspace_dim(), e.subspace_dim());
    let (mut alpha, mut beta) = block_solve(&sys.g, &sys.dr, &sys.er, md, me)?;
    // One step of iterative refinement on the full system residual.
    let r1: Vec<f64> = (0..md)
        .map(|i| sys.dr[i] - alpha[i] + (0..me).map(|p| sys.g[i * me + p] * beta[p]).sum::<f64>())
        .collect();
    let r2: Vec<f64> = (0..me)
        .map(|p| sys.er[p] - (0..md).map(|i| sys.g[i * me + p] * alpha[i]).sum::<f64>() + beta[p])
        .collect();
    let (da, db) = block_solve(&sys.g, &r1, &r2, md, me)?;
    alpha.iter_mut().zip(&da).for_each(|(a, x)| *a += x);
    beta.iter_mut().zip(&db).for_each(|(b, x)| *b += x);
    Ok(assemble(d, e, alpha, beta))
}

/// Fast path with automatic fallback to the general solve.
pub fn subspace_distance(d: &AffineSubspace, e: &AffineSubspace) -> Result<ClosestPair> {
    match subspace_to_subspace_fast(d, e) {
        Err(Error::NearSingular(_)) => subspace_to_subspace(d, e),
        other => other,
    }
}

/// Closest pair between two dual subspaces.
///
/// Unknowns are `x*` and the normal-space multipliers `μ`, `ν`:
///
/// ```text
/// A_d x* = A_d d0
/// A_e x* + ν = A_e e0
/// A_dᵀ μ − A_eᵀ ν = 0
/// ```
///
/// The identity block lets `ν = A_e (e0 − x*)` be eliminated up front, which
/// leaves `(n + k_d)` unknowns; the reduced system is solved by LU, falling
/// back to a minimum-norm solve when it is singular.
pub fn subspace_to_subspace_dual(d: &DualSubspace, e: &DualSubspace) -> Result<ClosestPair> {
    let n = d.dim();
    if e.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: e.dim(),
        });
    }
    let ad = d.normals().to_dmatrix();
    let ae = e.normals().to_dmatrix();
    let kd = ad.nrows();
    let pe = ae.transpose() * &ae;
    let size = n + kd;
    let mut sys = DMatrix::<f64>::zeros(size, size);
    sys.view_mut((0, 0), (kd, n)).copy_from(&ad);
    sys.view_mut((kd, 0), (n, n)).copy_from(&pe);
    sys.view_mut((kd, n), (n, kd)).copy_from(&ad.transpose());
    let d0 = DVector::from_column_slice(d.origin());
    let e0 = DVector::from_column_slice(e.origin());
    let mut rhs = DVector::<f64>::zeros(size);
    rhs.rows_mut(0, kd).copy_from(&(&ad * &d0));
    rhs.rows_mut(kd, n).copy_from(&(&pe * &e0));

    let lu = sys.clone().lu();
    let diag = lu.u().diagonal();
    let (umin, umax) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    // Intersecting subspaces make the system singular; any exact solution
    // then gives the same distance, but LU on a nearly singular matrix can
    // lose all accuracy, so the residual decides.
    let accurate = |s: &DVector<f64>| (&sys * s - &rhs).norm() <= 1e-10 * rhs.norm().max(1.0);
    let sol = match lu.solve(&rhs) {
        Some(s) if umin > 1e-10 * umax && accurate(&s) => s,
        _ => lstsq_min_norm(sys.clone(), &rhs, LSTSQ_REL_TOL),
    };
    let x = sol.rows(0, n).into_owned();
    let mu = sol.rows(n, kd).iter().copied().collect();
    let nu_vec = &ae * (&e0 - &x);
    let y = &x + ae.transpose() * &nu_vec;
    let x_star: Vec<f64> = x.iter().copied().collect();
    let y_star: Vec<f64> = y.iter().copied().collect();
    let distance = linalg::dist(&x_star, &y_star);
    Ok(ClosestPair {
        x_star,
        y_star,
        distance,
        coefficients: PairCoefficients::Dual {
            mu,
            nu: nu_vec.iter().copied().collect(),
        },
    })
}

/// Which representation is cheaper for a given `(n, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepresentationChoice {
    pub use_dual_p2s: bool,
    pub use_dual_s2s: bool,
    pub m: usize,
    pub n: usize,
}

/// Dual point-to-subspace needs `n − m` dot products instead of `m`, so it
/// wins from `m ≥ n/2`; the dual subspace system has `3n − 2m` unknowns
/// against `2m` primal ones but dense solves make it pay off only for
/// `m > 3n/4`.
pub fn choose_representation(n: usize, m: usize) -> Result<RepresentationChoice> {
    if m == 0 || m >= n {
        return Err(Error::InvalidDimension(format!(
            "subspace dimension {m} must satisfy 1 <= m < n = {n}"
        )));
    }
    Ok(RepresentationChoice {
        use_dual_p2s: 2 * m >= n,
        use_dual_s2s: 4 * m > 3 * n,
        m,
        n,
    })
}

/// One side of a distance-matrix computation. A side is homogeneous: all
/// plain descriptors or all subspaces of one representation.
#[derive(Clone, Copy, Debug)]
pub enum ItemSet<'a> {
    Points(&'a RowMatrix),
    Primal(&'a [AffineSubspace]),
    Dual(&'a [DualSubspace]),
}

impl ItemSet<'_> {
    pub fn len(&self) -> usize {
        match self {
            ItemSet::Points(p) => p.rows(),
            ItemSet::Primal(s) => s.len(),
            ItemSet::Dual(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_points(&self) -> bool {
        matches!(self, ItemSet::Points(_))
    }

    /// Shared `(n, m)` of the items, `m = 0` for points.
    fn shape(&self) -> Result<Option<(usize, usize)>> {
        fn uniform(mut it: impl Iterator<Item = (usize, usize)>) -> Result<Option<(usize, usize)>> {
            let Some(first) = it.next() else {
                return Ok(None);
            };
            if it.all(|s| s == first) {
                Ok(Some(first))
            } else {
                Err(Error::HeterogeneousDimensions)
            }
        }
        match self {
            ItemSet::Points(p) => Ok((p.rows() > 0).then(|| (p.cols(), 0))),
            ItemSet::Primal(s) => uniform(s.iter().map(|x| (x.dim(), x.subspace_dim()))),
            ItemSet::Dual(s) => uniform(s.iter().map(|x| (x.dim(), x.subspace_dim()))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    P2p,
    P2s,
    S2s,
}

impl DistanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceMode::P2p => "p2p",
            DistanceMode::P2s => "p2s",
            DistanceMode::S2s => "s2s",
        }
    }
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p2p" => Ok(DistanceMode::P2p),
            "p2s" => Ok(DistanceMode::P2s),
            "s2s" => Ok(DistanceMode::S2s),
            other => Err(Error::InvalidConfig(format!("unknown distance mode '{other}'"))),
        }
    }
}

/// Row-major `rows × cols` matrix of nonnegative distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

/// Distance between query `i` and reference `j`, computed on its own.
/// This is the reference the batched engine is checked against.
pub fn pair_distance(queries: ItemSet, i: usize, refs: ItemSet, j: usize) -> Result<f64> {
    use ItemSet::*;
    Ok(match (queries, refs) {
        (Points(q), Points(r)) => linalg::dist(q.row(i), r.row(j)),
        (Primal(q), Points(r)) => point_to_subspace(&q[i], r.row(j))?,
        (Points(q), Primal(r)) => point_to_subspace(&r[j], q.row(i))?,
        (Dual(q), Points(r)) => point_to_subspace_dual(&q[i], r.row(j))?,
        (Points(q), Dual(r)) => point_to_subspace_dual(&r[j], q.row(i))?,
        (Primal(q), Primal(r)) => subspace_distance(&q[i], &r[j])?.distance,
        (Dual(q), Dual(r)) => subspace_to_subspace_dual(&q[i], &r[j])?.distance,
        (Primal(_), Dual(_)) | (Dual(_), Primal(_)) => {
            return Err(Error::IncompatibleKinds(
                "primal and dual subspaces cannot be mixed".into(),
            ))
        }
    })
}

fn check_mode(queries: &ItemSet, refs: &ItemSet, mode: DistanceMode) -> Result<()> {
    let ok = match mode {
        DistanceMode::P2p => queries.is_points() && refs.is_points(),
        DistanceMode::P2s => queries.is_points() != refs.is_points(),
        DistanceMode::S2s => matches!(
            (queries, refs),
            (ItemSet::Primal(_), ItemSet::Primal(_)) | (ItemSet::Dual(_), ItemSet::Dual(_))
        ),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::IncompatibleKinds(format!(
            "mode {} does not fit the item kinds",
            mode.as_str()
        )))
    }
}

const QUERY_BLOCK: usize = 64;
const REF_BLOCK: usize = 256;

/// Exhaustive all-pairs distances between `queries` and `refs`.
///
/// Primal and point sides are stacked into dense panels so the inner
/// products `D Eᵀ`, `D e0`, `E d0`, `d0·e0` come from blocked matrix
/// products; each entry then needs only an `m × m` solve. Every entry agrees
/// with [`pair_distance`] to within 1e-9, independent of thread count.
pub fn distance_matrix(queries: ItemSet, refs: ItemSet, mode: DistanceMode) -> Result<DistanceMatrix> {
    check_mode(&queries, &refs, mode)?;
    let qs = queries.shape()?;
    let rs = refs.shape()?;
    if let (Some((qn, _)), Some((rn, _))) = (qs, rs) {
        if qn != rn {
            return Err(Error::DimensionMismatch {
                expected: qn,
                found: rn,
            });
        }
    }
    let (nq, nr) = (queries.len(), refs.len());
    if nq == 0 || nr == 0 {
        return DistanceMatrix::from_vec(nq, nr, Vec::new());
    }
    use ItemSet::*;
    match (queries, refs) {
        (Points(_), Primal(_)) | (Points(_), Dual(_)) => {
            Ok(distance_matrix(refs, queries, mode)?.transpose())
        }
        (Points(q), Points(r)) => {
            let qs = Stack::points(q);
            let rs = Stack::points(r);
            blocked(nq, nr, |qa, qb, ra, rb, out| p2p_block(&qs, &rs, qa, qb, ra, rb, q, r, out))
        }
        (Primal(q), Points(r)) => {
            let qs = Stack::primal(q);
            let rs = Stack::points(r);
            blocked(nq, nr, |qa, qb, ra, rb, out| p2s_block(&qs, &rs, qa, qb, ra, rb, q, r, out))
        }
        (Dual(q), Points(r)) => {
            let qs = Stack::dual(q);
            let rs = Stack::points(r);
            blocked(nq, nr, |qa, qb, ra, rb, out| p2s_dual_block(&qs, &rs, qa, qb, ra, rb, out))
        }
        (Primal(q), Primal(r)) => {
            let qs = Stack::primal(q);
            let rs = Stack::primal(r);
            blocked(nq, nr, |qa, qb, ra, rb, out| s2s_block(&qs, &rs, qa, qb, ra, rb, q, r, out))
        }
        (Dual(_), Dual(_)) => {
            let cell = |k: usize| pair_distance(queries, k / nr, refs, k % nr);
            #[cfg(feature = "parallel")]
            let values: Result<Vec<f64>> = (0..nq * nr).into_par_iter().map(cell).collect();
            #[cfg(not(feature = "parallel"))]
            let values: Result<Vec<f64>> = (0..nq * nr).map(cell).collect();
            DistanceMatrix::from_vec(nq, nr, values?)
        }
        _ => unreachable!("mode check rejects mixed kinds"),
    }
}

/// Runs `f` over `(query block × ref block)` tiles and assembles the matrix.
/// `f` writes the tile row-major into `out` with stride `rb − ra`.
fn blocked<F>(nq: usize, nr: usize, f: F) -> Result<DistanceMatrix>
where
    F: Fn(usize, usize, usize, usize, &mut [f64]) -> Result<()> + Sync,
{
    let blocks: Vec<usize> = (0..nq).step_by(QUERY_BLOCK).collect();
    let run = |&qa: &usize| -> Result<Vec<f64>> {
        let qb = (qa + QUERY_BLOCK).min(nq);
        let mut rows = vec![0.0; (qb - qa) * nr];
        let mut tile = Vec::new();
        for ra in (0..nr).step_by(REF_BLOCK) {
            let rb = (ra + REF_BLOCK).min(nr);
            tile.clear();
            tile.resize((qb - qa) * (rb - ra), 0.0);
            f(qa, qb, ra, rb, &mut tile)?;
            for i in 0..qb - qa {
                rows[i * nr + ra..i * nr + rb].copy_from_slice(&tile[i * (rb - ra)..(i + 1) * (rb - ra)]);
            }
        }
        Ok(rows)
    };
    #[cfg(feature = "parallel")]
    let parts: Result<Vec<Vec<f64>>> = blocks.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Result<Vec<Vec<f64>>> = blocks.iter().map(run).collect();
    let values = parts?.concat();
    DistanceMatrix::from_vec(nq, nr, values)
}

/// Stacked rows of one side: all basis (or normal) rows, all origins, and the
/// per-item quantities needed by the Gram-form kernels.
struct Stack {
    m: usize,
    /// `count·m × n`, item `i` owns rows `i·m .. (i+1)·m`.
    rows: DMatrix<f64>,
    /// `count × n` origins (the points themselves for a point side).
    origins: DMatrix<f64>,
    origin_sq: Vec<f64>,
    /// `D_i d0_i`, `count·m` values.
    self_proj: Vec<f64>,
}

impl Stack {
    fn points(p: &RowMatrix) -> Self {
        let origins = p.to_dmatrix();
        let origin_sq = p.iter_rows().map(|r| dot(r, r)).collect();
        Self {
            m: 0,
            rows: DMatrix::zeros(0, p.cols()),
            origins,
            origin_sq,
            self_proj: Vec::new(),
        }
    }

    fn from_parts<'a>(n: usize, m: usize, items: impl Iterator<Item = (&'a [f64], &'a RowMatrix)>) -> Self {
        let mut row_data = Vec::new();
        let mut origin_data = Vec::new();
        let mut origin_sq = Vec::new();
        let mut self_proj = Vec::new();
        let mut count = 0;
        for (o, b) in items {
            row_data.extend_from_slice(b.as_slice());
            origin_data.extend_from_slice(o);
            origin_sq.push(dot(o, o));
            self_proj.extend(b.iter_rows().map(|r| dot(r, o)));
            count += 1;
        }
        Self {
            m,
            rows: DMatrix::from_row_slice(count * m, n, &row_data),
            origins: DMatrix::from_row_slice(count, n, &origin_data),
            origin_sq,
            self_proj,
        }
    }

    fn primal(items: &[AffineSubspace]) -> Self {
        let (n, m) = (items[0].dim(), items[0].subspace_dim());
        Self::from_parts(n, m, items.iter().map(|s| (s.origin(), s.basis())))
    }

    fn dual(items: &[DualSubspace]) -> Self {
        let n = items[0].dim();
        let k = items[0].normals().rows();
        Self::from_parts(n, k, items.iter().map(|s| (s.origin(), s.normals())))
    }

    fn basis_rows(&self, a: usize, b: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.rows.rows(a * self.m, (b - a) * self.m)
    }

    fn origin_rows(&self, a: usize, b: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.origins.rows(a, b - a)
    }
}

#[allow(clippy::too_many_arguments)]
fn p2p_block(
    qs: &Stack,
    rs: &Stack,
    qa: usize,
    qb: usize,
    ra: usize,
    rb: usize,
    q: &RowMatrix,
    r: &RowMatrix,
    out: &mut [f64],
) -> Result<()> {
    let ip = qs.origin_rows(qa, qb) * rs.origin_rows(ra, rb).transpose();
    let w = rb - ra;
    for i in 0..qb - qa {
        for j in 0..w {
            let scale = qs.origin_sq[qa + i] + rs.origin_sq[ra + j];
            let d2 = scale - 2.0 * ip[(i, j)];
            out[i * w + j] = if d2 <= RECOMPUTE_REL * scale {
                linalg::dist(q.row(qa + i), r.row(ra + j))
            } else {
                d2.sqrt()
            };
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn p2s_block(
    qs: &Stack,
    rs: &Stack,
    qa: usize,
    qb: usize,
    ra: usize,
    rb: usize,
    subs: &[AffineSubspace],
    pts: &RowMatrix,
    out: &mut [f64],
) -> Result<()> {
    let m = qs.m;
    let pts_view = rs.origin_rows(ra, rb);
    let de = qs.basis_rows(qa, qb) * pts_view.transpose();
    let oe = qs.origin_rows(qa, qb) * pts_view.transpose();
    let w = rb - ra;
    for i in 0..qb - qa {
        let gi = qa + i;
        for j in 0..w {
            let gj = ra + j;
            let rr = rs.origin_sq[gj] + qs.origin_sq[gi] - 2.0 * oe[(i, j)];
            let proj: f64 = (0..m)
                .map(|a| (de[(i * m + a, j)] - qs.self_proj[gi * m + a]).powi(2))
                .sum();
            let d2 = rr - proj;
            out[i * w + j] = if d2 <= RECOMPUTE_REL * rr {
                point_to_subspace(&subs[gi], pts.row(gj))?
            } else {
                d2.sqrt()
            };
        }
    }
    Ok(())
}

fn p2s_dual_block(qs: &Stack, rs: &Stack, qa: usize, qb: usize, ra: usize, rb: usize, out: &mut [f64]) -> Result<()> {
    let k = qs.m;
    let ae = qs.basis_rows(qa, qb) * rs.origin_rows(ra, rb).transpose();
    let w = rb - ra;
    for i in 0..qb - qa {
        let gi = qa + i;
        for j in 0..w {
            let s: f64 = (0..k)
                .map(|a| (ae[(i * k + a, j)] - qs.self_proj[gi * k + a]).powi(2))
                .sum();
            out[i * w + j] = s.sqrt();
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn s2s_block(
    qs: &Stack,
    rs: &Stack,
    qa: usize,
    qb: usize,
    ra: usize,
    rb: usize,
    qsubs: &[AffineSubspace],
    rsubs: &[AffineSubspace],
    out: &mut [f64],
) -> Result<()> {
    let (md, me) = (qs.m, rs.m);
    let gpanel = qs.basis_rows(qa, qb) * rs.basis_rows(ra, rb).transpose();
    let de0 = qs.basis_rows(qa, qb) * rs.origin_rows(ra, rb).transpose();
    let ed0 = rs.basis_rows(ra, rb) * qs.origin_rows(qa, qb).transpose();
    let oo = qs.origin_rows(qa, qb) * rs.origin_rows(ra, rb).transpose();
    let w = rb - ra;
    let mut g = vec![0.0; md * me];
    let mut dr = vec![0.0; md];
    let mut er = vec![0.0; me];
    for i in 0..qb - qa {
        let gi = qa + i;
        for j in 0..w {
            let gj = ra + j;
            for a in 0..md {
                for b in 0..me {
                    g[a * me + b] = gpanel[(i * md + a, j * me + b)];
                }
                dr[a] = de0[(i * md + a, j)] - qs.self_proj[gi * md + a];
            }
            for b in 0..me {
                er[b] = rs.self_proj[gj * me + b] - ed0[(j * me + b, i)];
            }
            let rr = qs.origin_sq[gi] + rs.origin_sq[gj] - 2.0 * oo[(i, j)];
            let value = match block_solve(&g, &dr, &er, md, me) {
                Ok((alpha, beta)) => {
                    // ‖r − Dᵀα + Eᵀβ‖² expanded over the precomputed products.
                    let aa: f64 = alpha.iter().map(|x| x * x).sum();
                    let bb: f64 = beta.iter().map(|x| x * x).sum();
                    let adr: f64 = alpha.iter().zip(&dr).map(|(x, y)| x * y).sum();
                    let ber: f64 = beta.iter().zip(&er).map(|(x, y)| x * y).sum();
                    let mut agb = 0.0;
                    for a in 0..md {
                        for b in 0..me {
                            agb += alpha[a] * g[a * me + b] * beta[b];
                        }
                    }
                    let d2 = rr + aa + bb - 2.0 * adr + 2.0 * ber - 2.0 * agb;
                    let scale = rr + aa + bb;
                    if d2 <= RECOMPUTE_REL * scale {
                        subspace_distance(&qsubs[gi], &rsubs[gj])?.distance
                    } else {
                        d2.sqrt()
                    }
                }
                Err(Error::NearSingular(_)) => subspace_to_subspace(&qsubs[gi], &rsubs[gj])?.distance,
                Err(e) => return Err(e),
            };
            out[i * w + j] = value;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(origin: [f64; 3], dir: [f64; 3]) -> AffineSubspace {
        AffineSubspace::from_directions(origin.to_vec(), &[dir]).unwrap()
    }

    fn random_subspace(rng: &mut impl Rng, n: usize, m: usize) -> AffineSubspace {
        let origin: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dirs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        AffineSubspace::from_directions(origin, &dirs).unwrap()
    }

    fn certificate(d: &AffineSubspace, e: &AffineSubspace, cp: &ClosestPair) -> f64 {
        let gap = linalg::sub(&cp.y_star, &cp.x_star);
        d.basis()
            .iter_rows()
            .chain(e.basis().iter_rows())
            .map(|r| dot(r, &gap).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn point_to_x_axis() {
        let x = line([0.0; 3], [1.0, 0.0, 0.0]);
        assert_eq!(point_to_subspace(&x, &[0.0, 3.0, 4.0]).unwrap(), 5.0);
        assert!(point_to_subspace(&x, &[-2.0, 0.0, 0.0]).unwrap() <= 1e-10);
        let dual = x.to_dual();
        assert!((point_to_subspace_dual(&dual, &[0.0, 3.0, 4.0]).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(point_to_subspace_dual(&dual, &[0.0; 3]).unwrap(), 0.0);
        assert!(point_to_subspace(&x, &[0.0; 2]).is_err());
    }

    #[test]
    fn point_to_subspace_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sub = random_subspace(&mut rng, 128, 4);
        let e: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = sub.basis().to_dmatrix().transpose();
        let b = DVector::from_vec(linalg::sub(&e, sub.origin()));
        let c = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let resid = b - a * c;
        let d = point_to_subspace(&sub, &e).unwrap();
        assert!((d - resid.norm()).abs() < 1e-8);
    }

    #[test]
    fn dual_point_distance_matches_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sub = random_subspace(&mut rng, 64, 40);
        let dual = sub.to_dual();
        let back = dual.to_primal();
        for _ in 0..10 {
            let e: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = point_to_subspace_dual(&dual, &e).unwrap();
            let b = point_to_subspace(&back, &e).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn orthogonal_skew_lines() {
        let d = line([0.0; 3], [1.0, 0.0, 0.0]);
        let e = line([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        for cp in [
            subspace_to_subspace(&d, &e).unwrap(),
            subspace_to_subspace_fast(&d, &e).unwrap(),
            subspace_to_subspace_dual(&d.to_dual(), &e.to_dual()).unwrap(),
        ] {
            assert!((cp.distance - 1.0).abs() <= 1e-9);
            assert!(dist(&cp.x_star, &[0.0; 3]) <= 1e-9);
            assert!(dist(&cp.y_star, &[0.0, 1.0, 0.0]) <= 1e-9);
        }
    }

    #[test]
    fn identical_and_parallel() {
        let d = line([0.0; 3], [1.0, 0.0, 0.0]);
        assert!(subspace_to_subspace(&d, &d).unwrap().distance <= 1e-12);
        assert!(subspace_to_subspace_dual(&d.to_dual(), &d.to_dual()).unwrap().distance <= 1e-12);
        let shifted = line([0.0, 2.0, 0.0], [1.0, 0.0, 0.0]);
        let cp = subspace_to_subspace(&d, &shifted).unwrap();
        assert!((cp.distance - 2.0).abs() <= 1e-9);
        assert!(certificate(&d, &shifted, &cp) <= 1e-7);
        assert!(matches!(subspace_to_subspace_fast(&d, &shifted), Err(Error::NearSingular(_))));
        assert!((subspace_distance(&d, &shifted).unwrap().distance - 2.0).abs() <= 1e-9);
        let dual = subspace_to_subspace_dual(&d.to_dual(), &shifted.to_dual()).unwrap();
        assert!((dual.distance - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn fast_path_matches_general_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = random_subspace(&mut rng, 128, 2);
        let e = random_subspace(&mut rng, 128, 2);
        let a = subspace_to_subspace(&d, &e).unwrap();
        let b = subspace_to_subspace_fast(&d, &e).unwrap();
        assert!((a.distance - b.distance).abs() <= 1e-9);
        assert!(dist(&a.x_star, &b.x_star) <= 1e-9);
    }

    #[test]
    fn near_parallel_is_near_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let d = random_subspace(&mut rng, 8, 2);
        // Rotate the first basis row by 1e-9 rad towards a normal direction.
        let normal = d.to_dual().normals().row(0).to_vec();
        let (s, c) = (1e-9f64).sin_cos();
        let b0: Vec<f64> = d.basis().row(0).iter().zip(&normal).map(|(x, y)| c * x + s * y).collect();
        let basis = RowMatrix::from_rows(&[b0, d.basis().row(1).to_vec()]).unwrap();
        let mut origin = d.origin().to_vec();
        linalg::axpy(0.5, &normal, &mut origin);
        let e = AffineSubspace::new(origin, basis).unwrap();
        assert!(matches!(subspace_to_subspace_fast(&d, &e), Err(Error::NearSingular(_))));
        let cp = subspace_to_subspace(&d, &e).unwrap();
        assert!(certificate(&d, &e, &cp) <= 1e-7);
    }

    #[test]
    fn unequal_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let d = random_subspace(&mut rng, 10, 2);
        let e = random_subspace(&mut rng, 10, 5);
        let a = subspace_to_subspace(&d, &e).unwrap();
        let b = subspace_to_subspace_fast(&d, &e).unwrap();
        assert!((a.distance - b.distance).abs() <= 1e-9);
        assert!(certificate(&d, &e, &a) <= 1e-7);
    }

    #[test]
    fn dual_regime_matches_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..20 {
            let d = random_subspace(&mut rng, 16, 13);
            let e = random_subspace(&mut rng, 16, 13);
            let p = subspace_distance(&d, &e).unwrap();
            let q = subspace_to_subspace_dual(&d.to_dual(), &e.to_dual()).unwrap();
            assert!((p.distance - q.distance).abs() <= 1e-7);
        }
    }

    #[test]
    fn representation_choice() {
        let c = choose_representation(128, 2).unwrap();
        assert!(!c.use_dual_p2s && !c.use_dual_s2s);
        let c = choose_representation(128, 64).unwrap();
        assert!(c.use_dual_p2s && !c.use_dual_s2s);
        let c = choose_representation(128, 96).unwrap();
        assert!(!c.use_dual_s2s);
        let c = choose_representation(128, 100).unwrap();
        assert!(c.use_dual_p2s && c.use_dual_s2s);
        assert!(choose_representation(8, 8).is_err());
    }

    #[test]
    fn matrix_single_entry_and_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let d = random_subspace(&mut rng, 6, 2);
        let e = random_subspace(&mut rng, 6, 2);
        let dm = distance_matrix(
            ItemSet::Primal(std::slice::from_ref(&d)),
            ItemSet::Primal(std::slice::from_ref(&e)),
            DistanceMode::S2s,
        )
        .unwrap();
        assert!((dm.get(0, 0) - subspace_distance(&d, &e).unwrap().distance).abs() <= 1e-9);

        let p = RowMatrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let q = RowMatrix::from_rows(&[[-0.6, -0.8]]).unwrap();
        let dm = distance_matrix(ItemSet::Points(&p), ItemSet::Points(&q), DistanceMode::P2p).unwrap();
        assert!((dm.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let subs = vec![random_subspace(&mut rng, 6, 2), random_subspace(&mut rng, 6, 3)];
        let pts = RowMatrix::zeros(2, 6);
        assert_eq!(
            distance_matrix(ItemSet::Primal(&subs), ItemSet::Points(&pts), DistanceMode::P2s).unwrap_err(),
            Error::HeterogeneousDimensions
        );
        assert!(matches!(
            distance_matrix(ItemSet::Points(&pts), ItemSet::Points(&pts), DistanceMode::S2s),
            Err(Error::IncompatibleKinds(_))
        ));
        let other = RowMatrix::zeros(2, 5);
        assert!(matches!(
            distance_matrix(ItemSet::Points(&pts), ItemSet::Points(&other), DistanceMode::P2p),
            Err(Error::DimensionMismatch { .. })
        ));
        let duals: Vec<DualSubspace> = subs.iter().take(1).map(|s| s.to_dual()).collect();
        assert!(matches!(
            distance_matrix(ItemSet::Primal(&subs[..1]), ItemSet::Dual(&duals), DistanceMode::S2s),
            Err(Error::IncompatibleKinds(_))
        ));
    }

    #[test]
    fn batched_matches_single_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 12;
        let qs: Vec<AffineSubspace> = (0..70).map(|_| random_subspace(&mut rng, n, 3)).collect();
        let mut rs: Vec<AffineSubspace> = (0..300).map(|_| random_subspace(&mut rng, n, 3)).collect();
        // Force an exact intersection and a parallel pair into the batch.
        rs[5] = qs[2].clone();
        rs[7] = qs[4].with_origin(qs[4].point_at(&[0.3, -0.2, 0.1])).unwrap();
        let pts = RowMatrix::from_rows(
            &(0..300)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let qd: Vec<DualSubspace> = qs.iter().take(20).map(|s| s.to_dual()).collect();
        let rd: Vec<DualSubspace> = rs.iter().take(20).map(|s| s.to_dual()).collect();
        let cases: Vec<(ItemSet, ItemSet, DistanceMode)> = vec![
            (ItemSet::Primal(&qs), ItemSet::Primal(&rs), DistanceMode::S2s),
            (ItemSet::Primal(&qs), ItemSet::Points(&pts), DistanceMode::P2s),
            (ItemSet::Points(&pts), ItemSet::Primal(&qs), DistanceMode::P2s),
            (ItemSet::Dual(&qd), ItemSet::Points(&pts), DistanceMode::P2s),
            (ItemSet::Points(&pts), ItemSet::Points(&pts), DistanceMode::P2p),
            (ItemSet::Dual(&qd), ItemSet::Dual(&rd), DistanceMode::S2s),
        ];
        for (q, r, mode) in cases {
            let dm = distance_matrix(q, r, mode).unwrap();
            assert_eq!((dm.rows(), dm.cols()), (q.len(), r.len()));
            for i in 0..q.len() {
                for j in 0..r.len() {
                    let single = pair_distance(q, i, r, j).unwrap();
                    assert!(
                        (dm.get(i, j) - single).abs() <= 1e-9,
                        "{mode:?} ({i},{j}): {} vs {single}",
                        dm.get(i, j)
                    );
                }
            }
        }
        let dm = distance_matrix(ItemSet::Primal(&qs), ItemSet::Primal(&rs), DistanceMode::S2s).unwrap();
        assert!(dm.get(2, 5) <= 1e-7);
        assert!(dm.get(4, 7) <= 1e-7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn symmetric_and_bounded(seed in any::<u64>(), n in 3usize..20) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = rng.random_range(1..n);
                let d = random_subspace(&mut rng, n, m);
                let e = random_subspace(&mut rng, n, m);
                let de = subspace_distance(&d, &e).unwrap();
                let ed = subspace_distance(&e, &d).unwrap();
                prop_assert!((de.distance - ed.distance).abs() <= 1e-9);
                prop_assert!(de.distance <= dist(d.origin(), e.origin()) + 1e-12);
                prop_assert!(certificate(&d, &e, &de) <= 1e-7);
                if 2 * m > n {
                    prop_assert!(de.distance <= 1e-7);
                }
            }
        }
    }
}
