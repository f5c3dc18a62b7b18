//! Recovery and attribute-inference attacks against lifted descriptors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{distance_matrix, point_to_subspace, DistanceMatrix, DistanceMode, ItemSet};
use crate::error::{Error, Result};
use crate::lifting::{LiftConfig, LiftedFeature, Lifter, Strategy};
use crate::linalg::{dist, RowMatrix};
use crate::matching::SyntheticWorld;
use crate::rng;
use crate::stats;
use crate::subspace::AffineSubspace;

fn check_db(db: &RowMatrix, n: usize) -> Result<()> {
    if db.rows() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if db.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: db.cols(),
        });
    }
    Ok(())
}

/// Subspace distances this close to the minimum count as ties. Entries lying
/// on the subspace have distances at rounding level whose order carries no
/// information.
pub const TIE_TOL: f64 = 1e-9;

/// Database entries ordered by distance to `sub`. Entries tied with the
/// nearest (within [`TIE_TOL`]) come first in index order.
fn ranked(sub: &AffineSubspace, db: &RowMatrix) -> Result<Vec<(usize, f64)>> {
    check_db(db, sub.dim())?;
    let mut out = db
        .iter_rows()
        .enumerate()
        .map(|(i, v)| point_to_subspace(sub, v).map(|d| (i, d)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let tied = out.partition_point(|x| x.1 <= out[0].1 + TIE_TOL);
    out[..tied].sort_by_key(|x| x.0);
    Ok(out)
}

/// Nearest-neighbour attack: the database entry closest to the subspace,
/// lowest index among ties.
pub fn nna_attack(sub: &AffineSubspace, db: &RowMatrix) -> Result<(Vec<f64>, usize)> {
    check_db(db, sub.dim())?;
    let d: Vec<f64> = db
        .iter_rows()
        .map(|v| point_to_subspace(sub, v))
        .collect::<Result<_>>()?;
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let idx = d.iter().position(|&x| x <= min + TIE_TOL).expect("nonempty database");
    Ok((db.row(idx).to_vec(), idx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRecovery {
    pub recovered: Vec<f64>,
    /// Database index of the chosen candidate.
    pub index: usize,
    /// Its position among the `K` subspace-nearest candidates.
    pub rank: usize,
    /// `‖recovered − d_true‖`.
    pub distance: f64,
}

/// Upper-bound attack: among the `k` entries nearest to the subspace, the one
/// truly closest to `d_true`, optionally projected onto the subspace.
/// `d_true` stands in for an oracle and is only available to test harnesses.
pub fn oracle_attack(sub: &AffineSubspace, db: &RowMatrix, k: usize, d_true: &[f64], project: bool) -> Result<OracleRecovery> {
    let order = ranked(sub, db)?;
    Ok(oracle_curve_from(sub, db, &order, &[k], d_true, project)?.remove(0))
}

/// [`oracle_attack`] for several `K` at once, sharing one ranking.
pub fn oracle_curve(sub: &AffineSubspace, db: &RowMatrix, ks: &[usize], d_true: &[f64], project: bool) -> Result<Vec<OracleRecovery>> {
    let order = ranked(sub, db)?;
    oracle_curve_from(sub, db, &order, ks, d_true, project)
}

fn oracle_curve_from(
    sub: &AffineSubspace,
    db: &RowMatrix,
    order: &[(usize, f64)],
    ks: &[usize],
    d_true: &[f64],
    project: bool,
) -> Result<Vec<OracleRecovery>> {
    let candidate = |idx: usize| -> Result<Vec<f64>> {
        if project {
            sub.project(db.row(idx))
        } else {
            Ok(db.row(idx).to_vec())
        }
    };
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > db.rows() {
            return Err(Error::InvalidK { k, size: db.rows() });
        }
        let mut best: Option<OracleRecovery> = None;
        for (rank, &(idx, _)) in order[..k].iter().enumerate() {
            let c = candidate(idx)?;
            let d = dist(&c, d_true);
            if best.as_ref().is_none_or(|b| d < b.distance) {
                best = Some(OracleRecovery {
                    recovered: c,
                    index: idx,
                    rank,
                    distance: d,
                });
            }
        }
        out.push(best.expect("k >= 1"));
    }
    Ok(out)
}

/// What the attribute attack sees of each target.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Points(&'a RowMatrix),
    Lifted(&'a [AffineSubspace]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnOutcome {
    pub predicted: Vec<u32>,
    /// Present when true labels were supplied.
    pub accuracy: Option<f64>,
}

/// K-NN attribute inference: majority label of the `k` database entries
/// nearest to each target (lowest label on ties).
pub fn knn_attribute_attack(targets: Targets, db: &RowMatrix, labels: &[u32], k: usize, truth: Option<&[u32]>) -> Result<KnnOutcome> {
    if db.rows() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if labels.len() != db.rows() {
        return Err(Error::MissingLabels);
    }
    if k == 0 || k > db.rows() {
        return Err(Error::InvalidK { k, size: db.rows() });
    }
    let dm: DistanceMatrix = match targets {
        Targets::Points(p) => distance_matrix(ItemSet::Points(p), ItemSet::Points(db), DistanceMode::P2p)?,
        Targets::Lifted(s) => distance_matrix(ItemSet::Primal(s), ItemSet::Points(db), DistanceMode::P2s)?,
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1) as usize;
    let mut predicted = Vec::with_capacity(dm.rows());
    let mut idx: Vec<usize> = (0..db.rows()).collect();
    for i in 0..dm.rows() {
        let row = dm.row(i);
        idx.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut votes = vec![0usize; classes];
        for &j in &idx[..k] {
            votes[labels[j] as usize] += 1;
        }
        let top = *votes.iter().max().expect("at least one class");
        predicted.push(votes.iter().position(|&v| v == top).expect("max exists") as u32);
    }
    let accuracy = match truth {
        Some(t) if t.len() != predicted.len() => {
            return Err(Error::DimensionMismatch {
                expected: predicted.len(),
                found: t.len(),
            })
        }
        Some([]) => Some(0.0),
        Some(t) => Some(predicted.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64),
        None => None,
    };
    Ok(KnnOutcome { predicted, accuracy })
}

/// Per-cell attack summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub strategy: Strategy,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_dist: f64,
    pub p50_dist: f64,
    pub p90_dist: f64,
    pub top1_rate: f64,
    pub confusion_rate: f64,
}

/// One cell in full, as written to the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCell {
    #[serde(flatten)]
    pub summary: AttackRow,
    /// `‖d̃ − d‖` per target.
    pub distances: Vec<f64>,
    /// Same with the recovered entry projected onto the subspace.
    pub projected_distances: Vec<f64>,
    pub mean_projected_dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub cells: Vec<AttackCell>,
}

impl AttackReport {
    pub fn rows(&self) -> Vec<AttackRow> {
        self.cells.iter().map(|c| c.summary.clone()).collect()
    }
}

/// Targets with their lifts; samples are always recorded since the
/// confusion rate needs them.
#[derive(Clone, Debug)]
pub struct LiftedTargets {
    pub descriptors: RowMatrix,
    pub lifts: Vec<LiftedFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub strategies: Vec<Strategy>,
    pub ms: Vec<usize>,
    pub ks: Vec<usize>,
    pub targets: usize,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Random, Strategy::Adversarial, Strategy::Hybrid, Strategy::SubHybrid],
            ms: vec![2, 4, 8],
            ks: vec![1],
            targets: 200,
            seed: 0,
        }
    }
}

/// Draws `count` descriptors from the world's model and lifts them as one
/// image, with a uniformly drawn sub-database for the `sub_*` strategies.
pub fn lift_targets(world: &SyntheticWorld, strategy: Strategy, m: usize, count: usize, seed: u64) -> Result<LiftedTargets> {
    let mut r = rng::seeded(rng::derive_seed(seed, 20));
    let descriptors = world.model.sample(count, &mut r).points;
    let mut cfg = LiftConfig::new(m, strategy, seed).with_test_mode(true);
    if strategy.uses_subdatabase() {
        cfg = cfg.with_subdatabase(r.random_range(0..world.codebook.subdatabase_count()));
    }
    let lifts = Lifter::new(cfg, Some(&world.codebook))?.lift_image(&descriptors, None, 0)?;
    Ok(LiftedTargets { descriptors, lifts })
}

/// Runs the recovery attack for each `K` against lifted targets. `K = 1` is
/// the nearest-neighbour attack, larger `K` the oracle attack.
///
/// A recovery is top-1 when it is the database entry nearest to the true
/// descriptor, and a confusion when it lies closer to one of the codebook
/// samples planted on the subspace than to the true descriptor.
pub fn attack_cells(world: &SyntheticWorld, strategy: Strategy, m: usize, targets: &LiftedTargets, ks: &[usize]) -> Result<Vec<AttackCell>> {
    attack_cells_with(world.attack_db.centroids(), Some(world.codebook.centroids()), strategy, m, targets, ks)
}

/// [`attack_cells`] against an explicit attack database. Without the
/// lifting database `planted` the confusion rate is reported as zero.
pub fn attack_cells_with(
    db: &RowMatrix,
    planted: Option<&RowMatrix>,
    strategy: Strategy,
    m: usize,
    targets: &LiftedTargets,
    ks: &[usize],
) -> Result<Vec<AttackCell>> {
    if targets.descriptors.rows() != targets.lifts.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.lifts.len(),
            found: targets.descriptors.rows(),
        });
    }
    let n_t = targets.lifts.len();
    let mut dists = vec![Vec::with_capacity(n_t); ks.len()];
    let mut proj = vec![Vec::with_capacity(n_t); ks.len()];
    let mut top1 = vec![0usize; ks.len()];
    let mut confused = vec![0usize; ks.len()];
    for (t, lf) in targets.lifts.iter().enumerate() {
        let d = targets.descriptors.row(t);
        let nearest = (0..db.rows())
            .map(|i| (i, dist(db.row(i), d)))
            .fold((0, f64::INFINITY), |a, x| if x.1 < a.1 { x } else { a })
            .0;
        let order = ranked(&lf.subspace, db)?;
        let plain = oracle_curve_from(&lf.subspace, db, &order, ks, d, false)?;
        let projected = oracle_curve_from(&lf.subspace, db, &order, ks, d, true)?;
        let samples = lf.samples.as_deref().unwrap_or(&[]);
        for (c, (p, q)) in plain.iter().zip(&projected).enumerate() {
            dists[c].push(p.distance);
            proj[c].push(q.distance);
            top1[c] += (p.index == nearest) as usize;
            let planted_hit = planted.is_some_and(|w| {
                samples
                    .iter()
                    .any(|&s| s < w.rows() && dist(w.row(s), &p.recovered) < p.distance)
            });
            confused[c] += planted_hit as usize;
        }
    }
    let denom = n_t.max(1) as f64;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(c, &k)| AttackCell {
            summary: AttackRow {
                strategy,
                m,
                k,
                mean_dist: stats::mean(&dists[c]),
                p50_dist: stats::quantile(&dists[c], 0.5),
                p90_dist: stats::quantile(&dists[c], 0.9),
                top1_rate: top1[c] as f64 / denom,
                confusion_rate: confused[c] as f64 / denom,
            },
            mean_projected_dist: stats::mean(&proj[c]),
            distances: std::mem::take(&mut dists[c]),
            projected_distances: std::mem::take(&mut proj[c]),
        })
        .collect())
}

/// The strategy × `m` × `K` grid. Every cell reuses the campaign seed, so a
/// one-cell grid reproduces [`attack_cells`] exactly.
pub fn attack_campaign(world: &SyntheticWorld, cfg: &CampaignConfig) -> Result<AttackReport> {
    if cfg.ks.is_empty() || cfg.ms.is_empty() || cfg.strategies.is_empty() {
        return Err(Error::InvalidConfig("attack grid is empty".into()));
    }
    let mut cells = Vec::new();
    for &strategy in &cfg.strategies {
        for &m in &cfg.ms {
            let targets = lift_targets(world, strategy, m, cfg.targets, cfg.seed)?;
            cells.extend(attack_cells(world, strategy, m, &targets, &cfg.ks)?);
        }
    }
    Ok(AttackReport { cells })
}
