//! Lifting databases: spherical k-means codebooks, their random split into
//! disjoint sub-databases, and the synthetic descriptor model used in place
//! of real image features.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, RowMatrix};
use crate::rng;
use crate::subspace::UNIT_NORM_TOL;

/// `s` unit-norm entries, optionally labelled, partitioned into `S`
/// equally sized disjoint sub-databases.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftingCodebook {
    centroids: RowMatrix,
    labels: Option<Vec<u32>>,
    partition: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl LiftingCodebook {
    /// A codebook with a single sub-database holding every entry.
    pub fn new(centroids: RowMatrix) -> Result<Self> {
        if centroids.rows() == 0 {
            return Err(Error::EmptyDatabase);
        }
        if !centroids.is_finite() {
            return Err(Error::NonFinite);
        }
        for r in centroids.iter_rows() {
            let nrm = norm(r);
            if (nrm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm(nrm));
            }
        }
        let s = centroids.rows();
        Ok(Self {
            centroids,
            labels: None,
            partition: vec![0; s],
            groups: vec![(0..s).collect()],
        })
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Installs an explicit partition (entry index → sub-database index).
    pub fn with_partition(mut self, partition: Vec<usize>) -> Result<Self> {
        if partition.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: partition.len(),
            });
        }
        let parts = partition.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); parts];
        for (i, &p) in partition.iter().enumerate() {
            groups[p].push(i);
        }
        let size = self.len() / parts;
        if !self.len().is_multiple_of(parts) || groups.iter().any(|g| g.len() != size) {
            return Err(Error::NonDivisible {
                entries: self.len(),
                parts,
            });
        }
        self.partition = partition;
        self.groups = groups;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        self.centroids.row(i)
    }

    pub fn centroids(&self) -> &RowMatrix {
        &self.centroids
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn subdatabase_count(&self) -> usize {
        self.groups.len()
    }

    /// Entry indices of sub-database `idx`.
    pub fn subdatabase(&self, idx: usize) -> Result<&[usize]> {
        self.groups
            .get(idx)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidSubdatabaseIndex {
                index: idx,
                count: self.groups.len(),
            })
    }
}

/// Uniform random split into `parts` disjoint sub-databases of `s / parts`
/// entries each. Deterministic given `seed`.
pub fn split_database(codebook: &LiftingCodebook, parts: usize, seed: u64) -> Result<LiftingCodebook> {
    let s = codebook.len();
    if parts == 0 || !s.is_multiple_of(parts) {
        return Err(Error::NonDivisible { entries: s, parts });
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(&mut rng::seeded(seed));
    let size = s / parts;
    let mut partition = vec![0; s];
    for (pos, &idx) in order.iter().enumerate() {
        partition[idx] = pos / size;
    }
    codebook.clone().with_partition(partition)
}

/// Result of [`spherical_kmeans`].
#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: RowMatrix,
    pub assignments: Vec<usize>,
    /// Sum of cosine similarities to the assigned centroid, one value per
    /// assignment step (non-decreasing).
    pub objective_trace: Vec<f64>,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one assignment step")
    }
}

const ASSIGN_CHUNK: usize = 2048;

/// Assigns each point to the centroid of maximal cosine similarity (lowest
/// index on ties). Returns assignments, the similarity of each point to its
/// centroid, and the total.
fn assign(points: &DMatrix<f64>, centroids: &RowMatrix) -> (Vec<usize>, Vec<f64>, f64) {
    let ct = centroids.to_dmatrix().transpose();
    let npts = points.nrows();
    let chunks: Vec<usize> = (0..npts).step_by(ASSIGN_CHUNK).collect();
    let run = |&a: &usize| {
        let len = ASSIGN_CHUNK.min(npts - a);
        let sims = points.rows(a, len) * &ct;
        (0..len)
            .map(|i| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for j in 0..sims.ncols() {
                    let v = sims[(i, j)];
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                best
            })
            .collect::<Vec<_>>()
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<(usize, f64)>> = chunks.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<(usize, f64)>> = chunks.iter().map(run).collect();
    let flat: Vec<(usize, f64)> = parts.concat();
    let total = flat.iter().map(|x| x.1).sum();
    let (a, s) = flat.into_iter().unzip();
    (a, s, total)
}

/// k-means++ seeding with `1 − cos` (proportional to squared chord length).
fn init_plus_plus(points: &RowMatrix, k: usize, rng: &mut impl Rng) -> RowMatrix {
    let npts = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..npts);
    chosen.push(first);
    let mut best_cos: Vec<f64> = points.iter_rows().map(|p| dot(p, points.row(first))).collect();
    while chosen.len() < k {
        let weights: Vec<f64> = best_cos.iter().map(|c| (1.0 - c).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut pick = npts - 1;
            for (i, w) in weights.iter().enumerate() {
                if t < *w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            // Every point coincides with a chosen centre.
            rng.random_range(0..npts)
        };
        chosen.push(next);
        let c = points.row(next);
        for (bc, p) in best_cos.iter_mut().zip(points.iter_rows()) {
            *bc = bc.max(dot(p, c));
        }
    }
    let mut out = RowMatrix::with_cols(points.cols());
    for i in chosen {
        out.push_row(points.row(i)).expect("same width");
    }
    out
}

/// Spherical k-means on unit-norm points: cosine assignment, renormalized
/// mean update. Runs until assignments stop changing or `max_iters` updates.
/// Empty clusters are re-seeded from the points farthest from their centroid.
pub fn spherical_kmeans(points: &RowMatrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    let npts = points.rows();
    if k == 0 || k > npts {
        return Err(Error::InvalidConfig(format!(
            "cluster count {k} must be in 1..={npts}"
        )));
    }
    for r in points.iter_rows() {
        let nrm = norm(r);
        if (nrm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm(nrm));
        }
    }
    let n = points.cols();
    let mut rng = rng::seeded(seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let dm = points.to_dmatrix();
    let (mut assignments, mut sims, obj) = assign(&dm, &centroids);
    let mut trace = vec![obj];
    for _ in 0..max_iters {
        let mut sums = RowMatrix::zeros(k, n);
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter_rows().zip(&assignments) {
            crate::linalg::axpy(1.0, p, sums.row_mut(a));
            counts[a] += 1;
        }
        let mut empty = Vec::new();
        for j in 0..k {
            let s = sums.row(j).to_vec();
            let nrm = norm(&s);
            if counts[j] == 0 || nrm <= 1e-12 {
                empty.push(j);
            } else {
                centroids
                    .row_mut(j)
                    .iter_mut()
                    .zip(&s)
                    .for_each(|(c, v)| *c = v / nrm);
            }
        }
        if !empty.is_empty() {
            let mut far: Vec<usize> = (0..npts).collect();
            far.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
            for (j, &p) in empty.iter().zip(&far) {
                centroids.row_mut(*j).copy_from_slice(points.row(p));
            }
        }
        let (next, next_sims, obj) = assign(&dm, &centroids);
        trace.push(obj);
        let changed = next != assignments;
        assignments = next;
        sims = next_sims;
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective_trace: trace,
    })
}

/// Clusters on the unit sphere: each sample is a centre plus isotropic
/// Gaussian noise of per-coordinate scale `noise_sigma`, renormalized.
#[derive(Clone, Debug)]
pub struct DescriptorModel {
    pub centers: RowMatrix,
    pub noise_sigma: f64,
    /// Attribute label per centre, when the model is labelled.
    pub labels: Option<Vec<u32>>,
}

/// Descriptors drawn from a [`DescriptorModel`].
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub points: RowMatrix,
    pub cluster_of: Vec<usize>,
    pub labels: Option<Vec<u32>>,
}

impl DescriptorModel {
    /// Centres uniform on the sphere. With `label_classes = Some(c)`, centre
    /// `i` carries label `i mod c`.
    pub fn random(n: usize, clusters: usize, noise_sigma: f64, label_classes: Option<u32>, seed: u64) -> Result<Self> {
        if n == 0 || clusters == 0 || label_classes == Some(0) {
            return Err(Error::InvalidConfig("corpus counts must be positive".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be a nonnegative number".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut centers = RowMatrix::with_cols(n);
        for _ in 0..clusters {
            centers.push_row(&random_unit(n, &mut rng))?;
        }
        let labels = label_classes.map(|c| (0..clusters as u32).map(|i| i % c).collect());
        Ok(Self {
            centers,
            noise_sigma,
            labels,
        })
    }

    /// Pulls every centre towards a random direction shared by its label
    /// class, so that labels correlate with position beyond single clusters.
    pub fn with_attribute_shift(mut self, shift: f64, seed: u64) -> Result<Self> {
        let Some(labels) = self.labels.clone() else {
            return Err(Error::MissingLabels);
        };
        if shift == 0.0 {
            return Ok(self);
        }
        let n = self.dim();
        let classes = labels.iter().max().map_or(0, |m| m + 1) as usize;
        let mut rng = rng::seeded(seed);
        let dirs: Vec<Vec<f64>> = (0..classes).map(|_| random_unit(n, &mut rng)).collect();
        for (i, &l) in labels.iter().enumerate() {
            let row = self.centers.row_mut(i);
            crate::linalg::axpy(shift, &dirs[l as usize], row);
            let nrm = norm(row);
            row.iter_mut().for_each(|x| *x /= nrm);
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn clusters(&self) -> usize {
        self.centers.rows()
    }

    /// One noisy sample around centre `c`.
    pub fn sample_around(&self, c: usize, rng: &mut impl Rng) -> Vec<f64> {
        perturb(self.centers.row(c), self.noise_sigma, rng)
    }

    /// `count` samples with uniformly random cluster membership.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> SyntheticCorpus {
        let mut points = RowMatrix::with_cols(self.dim());
        let mut cluster_of = Vec::with_capacity(count);
        for _ in 0..count {
            let c = rng.random_range(0..self.clusters());
            points.push_row(&self.sample_around(c, rng)).expect("same width");
            cluster_of.push(c);
        }
        self.finish(points, cluster_of)
    }

    /// Exactly `points_per_cluster` samples per centre, interleaved so that
    /// sample `p` belongs to cluster `p mod clusters`.
    pub fn corpus(&self, points_per_cluster: usize, seed: u64) -> SyntheticCorpus {
        let mut rng = rng::seeded(seed);
        let k = self.clusters();
        let mut points = RowMatrix::with_cols(self.dim());
        let mut cluster_of = Vec::with_capacity(k * points_per_cluster);
        for p in 0..k * points_per_cluster {
            let c = p % k;
            points.push_row(&self.sample_around(c, &mut rng)).expect("same width");
            cluster_of.push(c);
        }
        self.finish(points, cluster_of)
    }

    fn finish(&self, points: RowMatrix, cluster_of: Vec<usize>) -> SyntheticCorpus {
        let labels = self
            .labels
            .as_ref()
            .map(|l| cluster_of.iter().map(|&c| l[c]).collect());
        SyntheticCorpus {
            points,
            cluster_of,
            labels,
        }
    }
}

/// Stand-in for a large collection of real local features: `clusters`
/// centres with `points_per_cluster` noisy unit-norm samples each.
pub fn build_synthetic_corpus(
    n: usize,
    clusters: usize,
    points_per_cluster: usize,
    noise_sigma: f64,
    seed: u64,
    label_classes: Option<u32>,
) -> Result<SyntheticCorpus> {
    if points_per_cluster == 0 {
        return Err(Error::InvalidConfig("corpus counts must be positive".into()));
    }
    let model = DescriptorModel::random(n, clusters, noise_sigma, label_classes, seed)?;
    Ok(model.corpus(points_per_cluster, rng::derive_seed(seed, 1)))
}

pub fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nrm = norm(&v);
        if nrm > 1e-12 {
            return v.into_iter().map(|x| x / nrm).collect();
        }
    }
}

/// `normalize(v + sigma · g)` with `g ~ N(0, I)`.
pub fn perturb(v: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    loop {
        let w: Vec<f64> = v
            .iter()
            .map(|x| x + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let nrm = norm(&w);
        if nrm > 1e-12 {
            return w.into_iter().map(|x| x / nrm).collect();
        }
    }
}
