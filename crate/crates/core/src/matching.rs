//! Descriptor matching and the synthetic matching benchmark.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{perturb, spherical_kmeans, split_database, DescriptorModel, LiftingCodebook};
use crate::distance::{distance_matrix, DistanceMatrix, DistanceMode, ItemSet, DEFAULT_TAU_INTERSECT};
use crate::error::{Error, Result};
use crate::lifting::{LiftConfig, LiftedFeature, Lifter, Strategy};
use crate::linalg::{dist, RowMatrix};
use crate::rng;
use crate::subspace::AffineSubspace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query: usize,
    pub reference: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    MutualNn,
    Ratio,
    /// The second-nearest distance was within the intersection tolerance.
    ZeroSecond,
}

/// A candidate removed by a filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub query: usize,
    pub reference: usize,
    pub filter: Filter,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub filter_trace: Vec<Removal>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reference matched to each query, if any.
    pub fn by_query(&self, queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; queries];
        for p in &self.pairs {
            out[p.query] = Some(p.reference);
        }
        out
    }
}

/// Index of the smallest value, lowest index on ties.
fn argmin(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

/// Pairs that are each other's nearest neighbour.
pub fn mutual_nn(dm: &DistanceMatrix) -> MatchSet {
    let (rows, cols) = (dm.rows(), dm.cols());
    let mut col_best: Vec<(usize, f64)> = vec![(usize::MAX, f64::INFINITY); cols];
    for i in 0..rows {
        for (j, &v) in dm.row(i).iter().enumerate() {
            if v < col_best[j].1 || col_best[j].0 == usize::MAX {
                col_best[j] = (i, v);
            }
        }
    }
    let mut set = MatchSet::default();
    for i in 0..rows {
        let Some(j) = argmin(dm.row(i).iter().copied()) else {
            continue;
        };
        if col_best[j].0 == i {
            set.pairs.push(Match {
                query: i,
                reference: j,
                distance: dm.get(i, j),
            });
        } else {
            set.filter_trace.push(Removal {
                query: i,
                reference: j,
                filter: Filter::MutualNn,
            });
        }
    }
    set
}

/// Keeps `(i, j)` when `dist(i, j) ≤ ratio · second`, `second` being the
/// smallest distance in row `i` outside column `j`. Rows whose `second` is
/// at most `tau_intersect` are dropped: the ratio carries no information
/// when two subspaces both (nearly) touch the query.
pub fn ratio_filter(dm: &DistanceMatrix, matches: &MatchSet, ratio: f64, tau_intersect: f64) -> Result<MatchSet> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("ratio {ratio} must lie in (0, 1]")));
    }
    let mut out = MatchSet {
        pairs: Vec::with_capacity(matches.len()),
        filter_trace: matches.filter_trace.clone(),
    };
    for p in &matches.pairs {
        let second = dm
            .row(p.query)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != p.reference)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let removal = |filter| Removal {
            query: p.query,
            reference: p.reference,
            filter,
        };
        if second <= tau_intersect {
            out.filter_trace.push(removal(Filter::ZeroSecond));
        } else if p.distance <= ratio * second {
            out.pairs.push(*p);
        } else {
            out.filter_trace.push(removal(Filter::Ratio));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub precision: f64,
    pub recall: f64,
    pub num_matches: usize,
    pub num_correct: usize,
    pub collision_count: usize,
}

/// Scores matches against identity ground truth (query `i` ↔ reference `i`).
/// Recall is relative to the `min(rows, cols)` true pairs.
pub fn score(matches: &MatchSet, rows: usize, cols: usize, tau_intersect: f64) -> MatchReport {
    let num_matches = matches.len();
    let num_correct = matches.pairs.iter().filter(|p| p.query == p.reference).count();
    let truth = rows.min(cols);
    MatchReport {
        precision: if num_matches == 0 { 0.0 } else { num_correct as f64 / num_matches as f64 },
        recall: if truth == 0 { 0.0 } else { num_correct as f64 / truth as f64 },
        num_matches,
        num_correct,
        collision_count: matches.pairs.iter().filter(|p| p.distance <= tau_intersect).count(),
    }
}

/// Fraction of image-2 codebook samples that image 1 also sampled.
pub fn measure_collision_rate(image1: &[LiftedFeature], image2: &[LiftedFeature]) -> Result<f64> {
    let mut seen = HashSet::new();
    for lf in image1 {
        seen.extend(lf.samples.as_ref().ok_or(Error::MetadataMissing)?.iter().copied());
    }
    let (mut total, mut hits) = (0usize, 0usize);
    for lf in image2 {
        for s in lf.samples.as_ref().ok_or(Error::MetadataMissing)? {
            total += 1;
            hits += seen.contains(s) as usize;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Sizes of the synthetic world a benchmark runs in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n: usize,
    /// Centres of the descriptor model.
    pub clusters: usize,
    /// Per-coordinate noise around a centre.
    pub corpus_sigma: f64,
    /// Descriptors clustered into the lifting database.
    pub corpus_size: usize,
    /// Lifting database entries `s`.
    pub codebook_size: usize,
    /// Sub-databases `S`.
    pub subdatabases: usize,
    pub kmeans_iters: usize,
    pub label_classes: Option<u32>,
    /// Pull of each centre towards its label's direction.
    pub attribute_shift: f64,
    pub seed: u64,
}

impl WorldParams {
    /// The descriptor model every sample of this world is drawn from.
    pub fn model(&self) -> Result<DescriptorModel> {
        let model = DescriptorModel::random(self.n, self.clusters, self.corpus_sigma, self.label_classes, self.seed)?;
        if self.label_classes.is_some() {
            model.with_attribute_shift(self.attribute_shift, rng::derive_seed(self.seed, 4))
        } else {
            Ok(model)
        }
    }

    /// Small enough for unit tests.
    pub fn tiny(n: usize, seed: u64) -> Self {
        Self {
            n,
            clusters: 32,
            corpus_sigma: 0.1,
            corpus_size: 1024,
            codebook_size: 128,
            subdatabases: 4,
            kmeans_iters: 5,
            label_classes: None,
            attribute_shift: 0.0,
            seed,
        }
    }
}

/// A descriptor model with a lifting database clustered from one sample of
/// it and an attack database `V` clustered from an independent sample at
/// half the size.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    pub model: DescriptorModel,
    pub codebook: LiftingCodebook,
    pub attack_db: LiftingCodebook,
}

impl SyntheticWorld {
    pub fn build(params: WorldParams) -> Result<Self> {
        let seed = params.seed;
        let model = params.model()?;
        let codebook = cluster_database(&model, params.corpus_size, params.codebook_size, params.kmeans_iters, rng::derive_seed(seed, 1))?;
        let codebook = split_database(&codebook, params.subdatabases, rng::derive_seed(seed, 2))?;
        let attack_db = cluster_database(
            &model,
            params.corpus_size / 2,
            params.codebook_size / 2,
            params.kmeans_iters,
            rng::derive_seed(seed, 3),
        )?;
        Ok(Self {
            params,
            model,
            codebook,
            attack_db,
        })
    }
}

/// Samples `corpus_size` descriptors and clusters them into `k` entries.
/// Entry labels are the majority label of their members when the model is
/// labelled.
pub fn cluster_database(model: &DescriptorModel, corpus_size: usize, k: usize, iters: usize, seed: u64) -> Result<LiftingCodebook> {
    let corpus = model.sample(corpus_size, &mut rng::seeded(seed));
    let km = spherical_kmeans(&corpus.points, k, iters, rng::derive_seed(seed, 1))?;
    let cb = LiftingCodebook::new(km.centroids)?;
    match corpus.labels {
        None => Ok(cb),
        Some(labels) => {
            let classes = labels.iter().max().map_or(0, |m| m + 1) as usize;
            let mut votes = vec![vec![0usize; classes]; k];
            for (&a, &l) in km.assignments.iter().zip(&labels) {
                votes[a][l as usize] += 1;
            }
            let entry_labels = votes
                .iter()
                .map(|v| {
                    // Most votes, lowest label on ties.
                    let best = v.iter().copied().max().unwrap_or(0);
                    v.iter().position(|&c| c == best).unwrap_or(0) as u32
                })
                .collect();
            cb.with_labels(entry_labels)
        }
    }
}

/// One benchmark run: an image pair, lifted per `mode`, matched by mutual
/// nearest neighbours and optionally the ratio test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    pub per_image: usize,
    /// Per-coordinate noise between a query descriptor and its reference.
    pub noise_sigma: f64,
    pub strategy: Strategy,
    pub mode: DistanceMode,
    pub hybrid_random_count: Option<usize>,
    pub ratio: Option<f64>,
    pub tau_intersect: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(m: usize, per_image: usize, strategy: Strategy, mode: DistanceMode, seed: u64) -> Self {
        Self {
            m,
            per_image,
            noise_sigma: 0.02,
            strategy,
            mode,
            hybrid_random_count: None,
            ratio: None,
            tau_intersect: DEFAULT_TAU_INTERSECT,
            seed,
        }
    }
}

/// Report of one run together with what the run produced.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub report: MatchReport,
    pub matches: MatchSet,
    /// Sub-database drawn for each image, for the `sub_*` strategies.
    pub subdatabases: [Option<usize>; 2],
    /// True pairs whose lifted distance exceeded their raw distance.
    pub bound_violations: usize,
}

/// CSV row of the aggregate benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub strategy: Strategy,
    pub mode: DistanceMode,
    pub m: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub matches: usize,
    pub collisions: usize,
}

impl BenchmarkRow {
    pub fn new(s: &Scenario, r: &MatchReport) -> Self {
        Self {
            strategy: s.strategy,
            mode: s.mode,
            m: s.m,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
            precision: r.precision,
            recall: r.recall,
            matches: r.num_matches,
            collisions: r.collision_count,
        }
    }
}

/// Query image and its noisy copy.
pub fn image_pair(model: &DescriptorModel, count: usize, noise_sigma: f64, seed: u64) -> (RowMatrix, RowMatrix) {
    let mut r = rng::seeded(seed);
    let queries = model.sample(count, &mut r).points;
    let mut refs = RowMatrix::with_cols(model.dim());
    for q in queries.iter_rows() {
        refs.push_row(&perturb(q, noise_sigma, &mut r)).expect("same width");
    }
    (queries, refs)
}

pub fn run_matching_benchmark(world: &SyntheticWorld, sc: &Scenario) -> Result<BenchmarkRun> {
    let (queries, refs) = image_pair(&world.model, sc.per_image, sc.noise_sigma, rng::derive_seed(sc.seed, 10));
    let mut picker = rng::seeded(rng::derive_seed(sc.seed, 11));
    let parts = world.codebook.subdatabase_count();
    // One sub-database per image, drawn uniformly.
    let sub_idx = [picker.random_range(0..parts), picker.random_range(0..parts)];
    let lift = |points: &RowMatrix, image: usize| -> Result<Vec<AffineSubspace>> {
        let mut cfg = LiftConfig::new(sc.m, sc.strategy, sc.seed);
        cfg.hybrid_random_count = sc.hybrid_random_count;
        if sc.strategy.uses_subdatabase() {
            cfg.subdatabase_index = Some(sub_idx[image]);
        }
        let lifter = Lifter::new(cfg, Some(&world.codebook))?;
        Ok(lifter
            .lift_image(points, None, image as u64)?
            .into_iter()
            .map(|l| l.subspace)
            .collect())
    };
    let (q_lifted, r_lifted);
    let (qs, rs) = match sc.mode {
        DistanceMode::P2p => (ItemSet::Points(&queries), ItemSet::Points(&refs)),
        DistanceMode::P2s => {
            q_lifted = lift(&queries, 0)?;
            (ItemSet::Primal(&q_lifted), ItemSet::Points(&refs))
        }
        DistanceMode::S2s => {
            q_lifted = lift(&queries, 0)?;
            r_lifted = lift(&refs, 1)?;
            (ItemSet::Primal(&q_lifted), ItemSet::Primal(&r_lifted))
        }
    };
    let dm = distance_matrix(qs, rs, sc.mode)?;
    let bound_violations = (0..dm.rows().min(dm.cols()))
        .filter(|&i| dm.get(i, i) > dist(queries.row(i), refs.row(i)) + 1e-9)
        .count();
    let mut matches = mutual_nn(&dm);
    if let Some(ratio) = sc.ratio {
        matches = ratio_filter(&dm, &matches, ratio, sc.tau_intersect)?;
    }
    let report = score(&matches, dm.rows(), dm.cols(), sc.tau_intersect);
    let uses = sc.strategy.uses_subdatabase() && sc.mode != DistanceMode::P2p;
    Ok(BenchmarkRun {
        report,
        matches,
        subdatabases: if uses { [Some(sub_idx[0]), Some(sub_idx[1])] } else { [None, None] },
        bound_violations,
    })
}
