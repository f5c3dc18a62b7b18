//! Lifting a descriptor to an affine subspace that contains it.
//!
//! Every strategy builds `m` directions through `d` (random, codebook samples
//! `w − d`, or a mix), moves the origin to a random point of the subspace so
//! that `d` itself is not stored, and, whenever codebook samples were used,
//! replaces the basis by a fresh random one spanning the same directions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::LiftingCodebook;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, orthonormalize, sub, RowMatrix};
use crate::rng::{self, StreamRng};
use crate::subspace::{check_len, AffineSubspace, Descriptor};

/// Bound on resampling loops before falling back or failing.
pub const MAX_RESAMPLES: usize = 64;
/// Minimum offset between the stored origin and the concealed descriptor.
pub const MIN_ORIGIN_OFFSET: f64 = 1e-6;
/// A new direction is rejected when less than this fraction of its norm is
/// orthogonal to the directions accepted so far.
const DIRECTION_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Adversarial,
    Hybrid,
    SubAdversarial,
    SubHybrid,
    HybridPlus,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Random,
        Strategy::Adversarial,
        Strategy::Hybrid,
        Strategy::SubAdversarial,
        Strategy::SubHybrid,
        Strategy::HybridPlus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Adversarial => "adversarial",
            Strategy::Hybrid => "hybrid",
            Strategy::SubAdversarial => "sub_adversarial",
            Strategy::SubHybrid => "sub_hybrid",
            Strategy::HybridPlus => "hybrid_plus",
        }
    }

    pub fn needs_codebook(&self) -> bool {
        *self != Strategy::Random
    }

    pub fn uses_subdatabase(&self) -> bool {
        matches!(self, Strategy::SubAdversarial | Strategy::SubHybrid)
    }

    pub fn is_hybrid(&self) -> bool {
        matches!(self, Strategy::Hybrid | Strategy::SubHybrid | Strategy::HybridPlus)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub m: usize,
    pub strategy: Strategy,
    /// Random directions for the hybrid strategies; defaults to `max(1, m/2)`.
    pub hybrid_random_count: Option<usize>,
    pub seed: u64,
    /// Sub-database for the `sub_*` strategies, chosen once per image.
    pub subdatabase_index: Option<usize>,
    /// Keep the indices of the sampled codebook entries on each lift.
    pub test_mode: bool,
}

impl LiftConfig {
    pub fn new(m: usize, strategy: Strategy, seed: u64) -> Self {
        Self {
            m,
            strategy,
            hybrid_random_count: None,
            seed,
            subdatabase_index: None,
            test_mode: false,
        }
    }

    pub fn with_subdatabase(mut self, idx: usize) -> Self {
        self.subdatabase_index = Some(idx);
        self
    }

    pub fn with_random_count(mut self, r: usize) -> Self {
        self.hybrid_random_count = Some(r);
        self
    }

    pub fn with_test_mode(mut self, on: bool) -> Self {
        self.test_mode = on;
        self
    }

    /// Number of random directions; the remaining `m − r` are codebook samples.
    pub fn random_count(&self) -> usize {
        match self.strategy {
            Strategy::Random => self.m,
            Strategy::Adversarial | Strategy::SubAdversarial => 0,
            Strategy::Hybrid | Strategy::SubHybrid | Strategy::HybridPlus => {
                self.hybrid_random_count.unwrap_or((self.m / 2).max(1))
            }
        }
    }

    pub fn adversarial_count(&self) -> usize {
        self.m - self.random_count().min(self.m)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.m == 0 || self.m >= n {
            return Err(Error::InvalidDimension(format!(
                "subspace dimension {} must satisfy 1 <= m < n = {n}",
                self.m
            )));
        }
        if self.strategy.is_hybrid() {
            match self.random_count() {
                0 => {
                    return Err(Error::InvalidConfig(
                        "hybrid_random_count = 0 is the adversarial strategy".into(),
                    ))
                }
                r if r > self.m => {
                    return Err(Error::InvalidConfig(format!(
                        "hybrid_random_count {r} exceeds m = {}",
                        self.m
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A lifted descriptor. `samples` lists the codebook entries placed on the
/// subspace and is only kept in test mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedFeature {
    pub subspace: AffineSubspace,
    pub keypoint_id: u64,
    pub samples: Option<Vec<usize>>,
}

/// Lifts descriptors of one configuration against an optional codebook.
/// Candidate pools are resolved once at construction.
#[derive(Debug)]
pub struct Lifter<'a> {
    cfg: LiftConfig,
    codebook: Option<&'a LiftingCodebook>,
    pool: Vec<usize>,
    /// Per-label pools of entries carrying a different label (hybrid+).
    label_pools: BTreeMap<u32, Vec<usize>>,
}

impl<'a> Lifter<'a> {
    pub fn new(cfg: LiftConfig, codebook: Option<&'a LiftingCodebook>) -> Result<Self> {
        let mut label_pools = BTreeMap::new();
        let pool = match (cfg.strategy, codebook) {
            (Strategy::Random, _) => Vec::new(),
            (_, None) => return Err(Error::MissingCodebook),
            (s, Some(cb)) if s.uses_subdatabase() => {
                let idx = cfg.subdatabase_index.ok_or_else(|| {
                    Error::InvalidConfig(format!("{s} needs a subdatabase index"))
                })?;
                cb.subdatabase(idx)?.to_vec()
            }
            (Strategy::HybridPlus, Some(cb)) => {
                let labels = cb.labels().ok_or(Error::MissingLabels)?;
                for &l in labels {
                    label_pools.entry(l).or_insert_with(|| {
                        (0..labels.len()).filter(|&i| labels[i] != l).collect()
                    });
                }
                (0..cb.len()).collect()
            }
            (_, Some(cb)) => (0..cb.len()).collect(),
        };
        Ok(Self {
            cfg,
            codebook,
            pool,
            label_pools,
        })
    }

    pub fn config(&self) -> &LiftConfig {
        &self.cfg
    }

    /// Lifts one descriptor with the stream of `(image_id, keypoint_id)`.
    /// `label` is required by hybrid+ only.
    pub fn lift(&self, d: &[f64], label: Option<u32>, image_id: u64, keypoint_id: u64) -> Result<LiftedFeature> {
        let mut rng = rng::stream(self.cfg.seed, image_id, keypoint_id);
        self.lift_with_rng(d, label, keypoint_id, &mut rng)
    }

    pub fn lift_with_rng(&self, d: &[f64], label: Option<u32>, keypoint_id: u64, rng: &mut impl Rng) -> Result<LiftedFeature> {
        let n = d.len();
        self.cfg.validate(n)?;
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let adv = self.cfg.adversarial_count();
        let (pool, samples_needed): (&[usize], usize) = match self.cfg.strategy {
            Strategy::Random => (&[], 0),
            Strategy::HybridPlus => {
                let label = label.ok_or(Error::MissingLabels)?;
                let pool = match self.label_pools.get(&label) {
                    Some(p) => p.as_slice(),
                    // A label absent from the codebook differs from every entry.
                    None => self.pool.as_slice(),
                };
                if pool.len() < self.cfg.m {
                    return Err(Error::InsufficientOppositeLabelEntries {
                        label,
                        available: pool.len(),
                        required: self.cfg.m,
                    });
                }
                (pool, adv)
            }
            _ => (self.pool.as_slice(), adv),
        };
        if pool.len() < samples_needed {
            return Err(Error::CodebookTooSmall {
                available: pool.len(),
                required: samples_needed,
            });
        }
        if let Some(cb) = self.codebook {
            if samples_needed > 0 {
                check_len(cb.dim(), d)?;
            }
        }

        let mut basis = RowMatrix::with_cols(n);
        let mut samples = Vec::with_capacity(samples_needed);
        if samples_needed > 0 {
            let cb = self.codebook.ok_or(Error::MissingCodebook)?;
            add_codebook_directions(d, cb, pool, samples_needed, &mut basis, &mut samples, rng)?;
        }
        add_random_directions(n, self.cfg.m - samples_needed, &mut basis, rng)?;

        let origin = sample_translation(d, &basis, rng);
        let mut subspace = AffineSubspace::new(origin, basis)?;
        if samples_needed > 0 {
            subspace = rerandomize_basis(&subspace, rng)?;
        }
        Ok(LiftedFeature {
            subspace,
            keypoint_id,
            samples: self.cfg.test_mode.then_some(samples),
        })
    }

    /// Lifts every row of `descriptors` as keypoints `0..` of `image_id`.
    /// Output does not depend on thread scheduling.
    pub fn lift_image(&self, descriptors: &RowMatrix, labels: Option<&[u32]>, image_id: u64) -> Result<Vec<LiftedFeature>> {
        if let Some(l) = labels {
            if l.len() != descriptors.rows() {
                return Err(Error::DimensionMismatch {
                    expected: descriptors.rows(),
                    found: l.len(),
                });
            }
        }
        let one = |i: usize| self.lift(descriptors.row(i), labels.map(|l| l[i]), image_id, i as u64);
        #[cfg(feature = "parallel")]
        let out = (0..descriptors.rows()).into_par_iter().map(one).collect();
        #[cfg(not(feature = "parallel"))]
        let out = (0..descriptors.rows()).map(one).collect();
        out
    }
}

/// Draws `count` distinct pool entries `w` whose directions `w − d` extend
/// `basis`. A rejected entry is excluded and redrawn; more than
/// [`MAX_RESAMPLES`] rejections fail with [`Error::CodebookDegenerate`].
fn add_codebook_directions(
    d: &[f64],
    cb: &LiftingCodebook,
    pool: &[usize],
    count: usize,
    basis: &mut RowMatrix,
    samples: &mut Vec<usize>,
    rng: &mut impl Rng,
) -> Result<()> {
    // Positions in `pool` already drawn, kept sorted.
    let mut taken: Vec<usize> = Vec::with_capacity(count);
    let mut rejections = 0;
    while samples.len() < count {
        if taken.len() == pool.len() {
            return Err(Error::CodebookDegenerate);
        }
        let mut pos = rng.random_range(0..pool.len() - taken.len());
        for &t in &taken {
            if t <= pos {
                pos += 1;
            }
        }
        let at = taken.partition_point(|&t| t < pos);
        taken.insert(at, pos);
        let entry = pool[pos];
        if try_extend(basis, &sub(cb.entry(entry), d)) {
            samples.push(entry);
        } else {
            rejections += 1;
            if rejections > MAX_RESAMPLES {
                return Err(Error::CodebookDegenerate);
            }
        }
    }
    Ok(())
}

fn add_random_directions(n: usize, count: usize, basis: &mut RowMatrix, rng: &mut impl Rng) -> Result<()> {
    let target = basis.rows() + count;
    let mut rejections = 0;
    while basis.rows() < target {
        let v = uniform_cube(n, rng);
        if !try_extend(basis, &v) {
            rejections += 1;
            if rejections > MAX_RESAMPLES {
                return Err(Error::AllVectorsDegenerate);
            }
        }
    }
    Ok(())
}

/// Gram–Schmidt step with re-orthogonalization. Appends the normalized
/// residual of `v` when it is not numerically in the span of `basis`.
fn try_extend(basis: &mut RowMatrix, v: &[f64]) -> bool {
    let vn = norm(v);
    if !(vn > 1e-12) {
        return false;
    }
    let mut q = v.to_vec();
    for _ in 0..2 {
        for b in basis.iter_rows() {
            let c = dot(b, &q);
            axpy(-c, b, &mut q);
        }
    }
    let qn = norm(&q);
    if qn <= DIRECTION_REL_TOL * vn {
        return false;
    }
    q.iter_mut().for_each(|x| *x /= qn);
    basis.push_row(&q).expect("same width");
    true
}

pub(crate) fn uniform_cube(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Origin of the lifted subspace: the projection of a uniform point of
/// `[−1, 1]ⁿ` onto `d + span(basis)`, redrawn while it lies within
/// [`MIN_ORIGIN_OFFSET`] of `d`. After [`MAX_RESAMPLES`] draws it falls back
/// to `d + basis[0]`.
pub fn sample_translation(d: &[f64], basis: &RowMatrix, rng: &mut impl Rng) -> Vec<f64> {
    for _ in 0..MAX_RESAMPLES {
        let e = uniform_cube(d.len(), rng);
        let d0 = project_through(d, basis, &e);
        if crate::linalg::dist(&d0, d) > MIN_ORIGIN_OFFSET {
            return d0;
        }
    }
    let mut d0 = d.to_vec();
    axpy(1.0, basis.row(0), &mut d0);
    d0
}

fn project_through(p: &[f64], basis: &RowMatrix, e: &[f64]) -> Vec<f64> {
    let c = basis.mul_vec(&sub(e, p));
    let mut out = p.to_vec();
    for (r, &ci) in basis.iter_rows().zip(&c) {
        axpy(ci, r, &mut out);
    }
    out
}

/// Same point set, fresh basis: the projections of `m` uniform points of the
/// cube, taken relative to the origin and orthonormalized.
pub fn rerandomize_basis(sub_: &AffineSubspace, rng: &mut impl Rng) -> Result<AffineSubspace> {
    let m = sub_.subspace_dim();
    let n = sub_.dim();
    let basis = sub_.basis();
    for _ in 0..MAX_RESAMPLES {
        // Work in subspace coordinates: c_i = D (e_i − d0).
        let coords: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let e = uniform_cube(n, rng);
                basis.mul_vec(&sub(&e, sub_.origin()))
            })
            .collect();
        let q = match orthonormalize(&coords, 1e-6) {
            Ok(q) if q.rows() == m => q,
            _ => continue,
        };
        let mut fresh = RowMatrix::zeros(m, n);
        for i in 0..m {
            let row = fresh.row_mut(i);
            for (k, &qk) in q.row(i).iter().enumerate() {
                axpy(qk, basis.row(k), row);
            }
        }
        // Rounding in Q·D is at the 1e-16 level; one cleanup pass keeps the
        // result well inside the orthonormality tolerance.
        let fresh = orthonormalize(
            &fresh.iter_rows().collect::<Vec<_>>(),
            crate::linalg::DEFAULT_RANK_TOL,
        )?;
        if fresh.rows() == m {
            return AffineSubspace::new(sub_.origin().to_vec(), fresh);
        }
    }
    Err(Error::AllVectorsDegenerate)
}

/// Random directions only; deterministic given `(d, cfg.seed)`.
pub fn lift_random(d: &Descriptor, cfg: &LiftConfig) -> Result<LiftedFeature> {
    single(d, None, None, cfg, Strategy::Random)
}

pub fn lift_adversarial(d: &Descriptor, codebook: &LiftingCodebook, cfg: &LiftConfig) -> Result<LiftedFeature> {
    single(d, None, Some(codebook), cfg, Strategy::Adversarial)
}

pub fn lift_hybrid(d: &Descriptor, codebook: &LiftingCodebook, cfg: &LiftConfig) -> Result<LiftedFeature> {
    single(d, None, Some(codebook), cfg, Strategy::Hybrid)
}

/// `sub_adversarial` or `sub_hybrid`, drawing samples from the configured
/// sub-database only.
pub fn lift_with_subdatabase(d: &Descriptor, codebook: &LiftingCodebook, cfg: &LiftConfig) -> Result<LiftedFeature> {
    if !cfg.strategy.uses_subdatabase() {
        return Err(Error::InvalidConfig(format!(
            "{} is not a sub-database strategy",
            cfg.strategy
        )));
    }
    single(d, None, Some(codebook), cfg, cfg.strategy)
}

pub fn lift_hybrid_plus(d: &Descriptor, label: u32, codebook: &LiftingCodebook, cfg: &LiftConfig) -> Result<LiftedFeature> {
    single(d, Some(label), Some(codebook), cfg, Strategy::HybridPlus)
}

fn single(
    d: &Descriptor,
    label: Option<u32>,
    codebook: Option<&LiftingCodebook>,
    cfg: &LiftConfig,
    expected: Strategy,
) -> Result<LiftedFeature> {
    if cfg.strategy != expected {
        return Err(Error::InvalidConfig(format!(
            "configured strategy {} does not match {expected}",
            cfg.strategy
        )));
    }
    Lifter::new(cfg.clone(), codebook)?.lift(d.as_slice(), label, 0, 0)
}

/// Convenience for callers holding a generator rather than a stream id.
pub fn lift_one(d: &[f64], label: Option<u32>, codebook: Option<&LiftingCodebook>, cfg: &LiftConfig, rng: &mut StreamRng) -> Result<LiftedFeature> {
    Lifter::new(cfg.clone(), codebook)?.lift_with_rng(d, label, 0, rng)
}
