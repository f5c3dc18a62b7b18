//! Descriptors and affine subspaces in primal (origin + orthonormal basis) and
//! dual (origin + orthonormal normals) form.

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm, orthogonal_complement, RowMatrix};

/// Basis rows count as orthonormal within this `‖B Bᵀ − I‖_max`.
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Unit-norm descriptors satisfy `|‖d‖ − 1| ≤ UNIT_NORM_TOL`.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// A feature vector in `ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
    unit_norm: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_vector(&values)?;
        Ok(Self {
            values,
            unit_norm: false,
        })
    }

    /// A descriptor flagged unit-norm; rejects vectors off the unit sphere.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        check_vector(&values)?;
        let nrm = norm(&values);
        if (nrm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm(nrm));
        }
        Ok(Self {
            values,
            unit_norm: true,
        })
    }

    /// Rescales `values` onto the unit sphere.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        check_vector(&values)?;
        let nrm = norm(&values);
        if nrm == 0.0 {
            return Err(Error::AllVectorsDegenerate);
        }
        values.iter_mut().for_each(|v| *v /= nrm);
        Ok(Self {
            values,
            unit_norm: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for Descriptor {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::Deref for Descriptor {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

fn check_vector(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidDimension("empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub(crate) fn check_len(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// `origin + span(basis rows)` with orthonormal basis rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSubspace {
    origin: Vec<f64>,
    basis: RowMatrix,
}

impl AffineSubspace {
    /// Validates an already orthonormal basis.
    pub fn new(origin: Vec<f64>, basis: RowMatrix) -> Result<Self> {
        check_vector(&origin)?;
        let n = origin.len();
        if basis.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: basis.cols() });
        }
        let m = basis.rows();
        if m == 0 || m >= n {
            return Err(Error::InvalidDimension(format!(
                "subspace dimension {m} must satisfy 1 <= m < n = {n}"
            )));
        }
        if !basis.is_finite() {
            return Err(Error::NonFinite);
        }
        let dev = basis.gram_deviation();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { origin, basis })
    }

    /// Orthonormalizes `directions` first. Dependent directions are dropped,
    /// so the resulting dimension may be smaller than the number of inputs.
    pub fn from_directions<R: AsRef<[f64]>>(origin: Vec<f64>, directions: &[R]) -> Result<Self> {
        let basis = linalg::orthonormalize(directions, linalg::DEFAULT_RANK_TOL)?;
        Self::new(origin, basis)
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Subspace dimension `m`.
    pub fn subspace_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn basis(&self) -> &RowMatrix {
        &self.basis
    }

    /// `origin + basisᵀ coeffs`
    pub fn point_at(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut p = self.origin.clone();
        for (r, &c) in self.basis.iter_rows().zip(coeffs) {
            linalg::axpy(c, r, &mut p);
        }
        p
    }

    /// Coordinates of the orthogonal projection of `e` in the basis.
    pub fn coordinates(&self, e: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), e)?;
        let r = linalg::sub(e, &self.origin);
        Ok(self.basis.mul_vec(&r))
    }

    /// Orthogonal projection `d0 + Dᵀ D (e − d0)`.
    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        let c = self.coordinates(e)?;
        Ok(self.point_at(&c))
    }

    /// Same point set with a different origin.
    pub fn with_origin(&self, origin: Vec<f64>) -> Result<Self> {
        check_len(self.dim(), &origin)?;
        Self::new(origin, self.basis.clone())
    }

    pub fn to_dual(&self) -> DualSubspace {
        DualSubspace {
            origin: self.origin.clone(),
            normals: orthogonal_complement(&self.basis),
        }
    }
}

/// `origin + span(normal rows)^⊥` with orthonormal normals.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSubspace {
    origin: Vec<f64>,
    normals: RowMatrix,
}

impl DualSubspace {
    pub fn new(origin: Vec<f64>, normals: RowMatrix) -> Result<Self> {
        check_vector(&origin)?;
        let n = origin.len();
        if normals.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: normals.cols() });
        }
        let k = normals.rows();
        if k == 0 || k >= n {
            return Err(Error::InvalidDimension(format!(
                "normal count {k} must satisfy 1 <= n - m < n = {n}"
            )));
        }
        if !normals.is_finite() {
            return Err(Error::NonFinite);
        }
        let dev = normals.gram_deviation();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { origin, normals })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Dimension `m` of the represented subspace.
    pub fn subspace_dim(&self) -> usize {
        self.dim() - self.normals.rows()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn normals(&self) -> &RowMatrix {
        &self.normals
    }

    pub fn to_primal(&self) -> AffineSubspace {
        AffineSubspace {
            origin: self.origin.clone(),
            basis: orthogonal_complement(&self.normals),
        }
    }

    /// Largest constraint residual `max_i |a_iᵀ(x − origin)|`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let r = linalg::sub(x, &self.origin);
        self.normals
            .iter_rows()
            .map(|a| dot(a, &r).abs())
            .fold(0.0, f64::max)
    }
}

/// Closest points between two affine subspaces.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosestPair {
    /// Point on the first subspace.
    pub x_star: Vec<f64>,
    /// Point on the second subspace.
    pub y_star: Vec<f64>,
    pub distance: f64,
    pub coefficients: PairCoefficients,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PairCoefficients {
    /// `x* = d0 + Dᵀα`, `y* = e0 + Eᵀβ`.
    Primal { alpha: Vec<f64>, beta: Vec<f64> },
    /// `y* − x* = Dᵀμ = Eᵀν` over the normal sets.
    Dual { mu: Vec<f64>, nu: Vec<f64> },
}

pub fn project_point(sub: &AffineSubspace, e: &[f64]) -> Result<Vec<f64>> {
    sub.project(e)
}

pub fn primal_to_dual(sub: &AffineSubspace) -> DualSubspace {
    sub.to_dual()
}

pub fn dual_to_primal(sub: &DualSubspace) -> AffineSubspace {
    sub.to_primal()
}
