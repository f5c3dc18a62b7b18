//! The verbs. Each takes a resolved [`RunConfig`] plus file paths, writes
//! its outputs and returns what it wrote, so tests can drive them without a
//! subprocess.

use std::path::{Path, PathBuf};
use std::time::Instant;

use affine_lift::attacks::{attack_campaign, attack_cells_with, knn_attribute_attack, AttackCell, AttackRow, CampaignConfig, KnnOutcome, LiftedTargets, Targets};
use affine_lift::codebook::{perturb, split_database, LiftingCodebook};
use affine_lift::distance::{choose_representation, distance_matrix, DistanceMatrix, DistanceMode, ItemSet};
use affine_lift::format::{RecordKind, VectorSet};
use affine_lift::lifting::{LiftConfig, LiftedFeature, Lifter, Strategy};
use affine_lift::matching::{cluster_database, mutual_nn, ratio_filter, score, MatchReport, MatchSet, SyntheticWorld};
use affine_lift::{rng, stats, AffineSubspace, DualSubspace, Error, RowMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SubdatabasePolicy};
use crate::error::{CliError, CliResult};

/// Version of every JSON report and sidecar written here.
pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const PARTITION_SUFFIX: &str = ".partition.json";
pub const LABELS_SUFFIX: &str = ".labels.json";
pub const SECRETS_SUFFIX: &str = ".SECRETS.json";

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_json_if_present<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn envelope<'a, T: Serialize>(command: &'a str, config: &'a RunConfig, body: T) -> Envelope<'a, T> {
    Envelope {
        format_version: REPORT_FORMAT_VERSION,
        command,
        config,
        body,
    }
}

fn check_dim(cfg: &RunConfig, found: usize, what: &Path) -> CliResult<()> {
    if cfg.n != found {
        return Err(CliError::Config(format!(
            "n = {} but {} holds {found}-dimensional records",
            cfg.n,
            what.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- build-db

#[derive(Clone, Debug)]
pub struct BuildOutcome {
    pub codebook: PathBuf,
    pub partition: PathBuf,
    pub labels: Option<PathBuf>,
    pub subdatabase_sizes: Vec<usize>,
}

/// Clusters a synthetic corpus into the lifting database and splits it into
/// sub-databases. Same config, same bytes.
pub fn build_db(cfg: &RunConfig, out: &Path) -> CliResult<BuildOutcome> {
    cfg.validate()?;
    if cfg.codebook_size == 0 || !cfg.codebook_size.is_multiple_of(cfg.subdatabases) {
        return Err(Error::NonDivisible {
            entries: cfg.codebook_size,
            parts: cfg.subdatabases,
        }
        .into());
    }
    let params = cfg.world_params();
    let model = params.model()?;
    let cb = cluster_database(&model, cfg.corpus_size, cfg.codebook_size, cfg.kmeans_iters, rng::derive_seed(cfg.seed, 1))?;
    let cb = split_database(&cb, cfg.subdatabases, rng::derive_seed(cfg.seed, 2))?;
    ensure_parent(out)?;
    VectorSet::from_descriptors(cb.centroids())?.save(out)?;
    let partition = sidecar(out, PARTITION_SUFFIX);
    write_json(&partition, cb.partition())?;
    let labels = match cb.labels() {
        Some(l) => {
            let p = sidecar(out, LABELS_SUFFIX);
            write_json(&p, l)?;
            Some(p)
        }
        None => {
            remove_stale(&sidecar(out, LABELS_SUFFIX))?;
            None
        }
    };
    Ok(BuildOutcome {
        codebook: out.to_path_buf(),
        partition,
        labels,
        subdatabase_sizes: (0..cb.subdatabase_count()).map(|i| cb.subdatabase(i).map(<[usize]>::len)).collect::<Result<_, _>>()?,
    })
}

fn remove_stale(path: &Path) -> CliResult<()> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    Ok(())
}

/// Loads a database file with its partition and label sidecars when present.
pub fn load_codebook(path: &Path) -> CliResult<LiftingCodebook> {
    let set = VectorSet::load(path)?;
    let mut cb = LiftingCodebook::new(set.to_unit_descriptors()?)?;
    if let Some(labels) = read_json_if_present::<Vec<u32>>(&sidecar(path, LABELS_SUFFIX))? {
        cb = cb.with_labels(labels)?;
    }
    if let Some(partition) = read_json_if_present::<Vec<usize>>(&sidecar(path, PARTITION_SUFFIX))? {
        cb = cb.with_partition(partition)?;
    }
    Ok(cb)
}

// ------------------------------------------------------------------- synth

#[derive(Clone, Debug)]
pub struct SynthOutcome {
    pub queries: PathBuf,
    pub refs: PathBuf,
    pub labelled: bool,
}

/// An image pair drawn from the configured descriptor model: queries and a
/// noisy copy of each, row `i` corresponding to row `i`.
pub fn synth(cfg: &RunConfig, prefix: &Path) -> CliResult<SynthOutcome> {
    cfg.validate()?;
    let model = cfg.world_params().model()?;
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, 10));
    let corpus = model.sample(cfg.per_image, &mut r);
    let mut refs = RowMatrix::with_cols(cfg.n);
    for q in corpus.points.iter_rows() {
        refs.push_row(&perturb(q, cfg.noise_sigma, &mut r))?;
    }
    let queries_path = sidecar(prefix, ".queries.ppvf");
    let refs_path = sidecar(prefix, ".refs.ppvf");
    ensure_parent(&queries_path)?;
    VectorSet::from_descriptors(&corpus.points)?.save(&queries_path)?;
    VectorSet::from_descriptors(&refs)?.save(&refs_path)?;
    for p in [&queries_path, &refs_path] {
        match &corpus.labels {
            Some(l) => write_json(&sidecar(p, LABELS_SUFFIX), l)?,
            None => remove_stale(&sidecar(p, LABELS_SUFFIX))?,
        }
    }
    Ok(SynthOutcome {
        queries: queries_path,
        refs: refs_path,
        labelled: corpus.labels.is_some(),
    })
}

// -------------------------------------------------------------------- lift

#[derive(Clone, Debug, Default)]
pub struct LiftOptions {
    pub image_id: u64,
    /// Write the `.SECRETS.json` sidecar. Never on by default.
    pub test_mode: bool,
    /// Attribute labels of the descriptors; defaults to the file's sidecar.
    pub labels: Option<PathBuf>,
}

/// Concealed data of one lifted file. Written only in test mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Secrets {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub strategy: Strategy,
    pub m: usize,
    pub image_id: u64,
    pub subdatabase: Option<usize>,
    pub codebook: Option<PathBuf>,
    pub features: Vec<SecretFeature>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecretFeature {
    pub keypoint_id: u64,
    pub descriptor: Vec<f64>,
    pub label: Option<u32>,
    pub samples: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LiftOutcome {
    pub output: PathBuf,
    pub count: usize,
    pub subdatabase: Option<usize>,
    pub secrets: Option<PathBuf>,
}

/// Sub-database an image lifts from under the configured policy.
pub fn subdatabase_for(cfg: &RunConfig, image_id: u64, parts: usize) -> usize {
    match cfg.subdatabase_policy {
        SubdatabasePolicy::Fixed => cfg.subdatabase_index,
        SubdatabasePolicy::Uniform => {
            rng::seeded(rng::derive_seed(rng::derive_seed(cfg.seed, 11), image_id)).random_range(0..parts.max(1))
        }
    }
}

pub fn lift(cfg: &RunConfig, descriptors: &Path, db: Option<&Path>, out: &Path, opts: &LiftOptions) -> CliResult<LiftOutcome> {
    cfg.validate()?;
    let set = VectorSet::load(descriptors)?;
    if set.kind() != RecordKind::Descriptor {
        return Err(Error::IncompatibleKinds(format!("lift expects descriptors, {} holds {} records", descriptors.display(), set.kind().name())).into());
    }
    check_dim(cfg, set.dim(), descriptors)?;
    let points = set.to_descriptors()?;
    let labels_path = opts.labels.clone().unwrap_or_else(|| sidecar(descriptors, LABELS_SUFFIX));
    let labels: Option<Vec<u32>> = read_json_if_present(&labels_path)?;
    if opts.labels.is_some() && labels.is_none() {
        return Err(CliError::Data(format!("{}: no such labels file", labels_path.display())));
    }
    let codebook = match db {
        Some(p) => {
            let cb = load_codebook(p)?;
            check_dim(cfg, cb.dim(), p)?;
            Some(cb)
        }
        None if cfg.strategy.needs_codebook() => return Err(Error::MissingCodebook.into()),
        None => None,
    };
    let mut lc = LiftConfig::new(cfg.m, cfg.strategy, cfg.seed).with_test_mode(opts.test_mode);
    lc.hybrid_random_count = cfg.hybrid_random_count;
    let mut subdatabase = None;
    if cfg.strategy.uses_subdatabase() {
        let parts = codebook.as_ref().map_or(1, LiftingCodebook::subdatabase_count);
        let idx = subdatabase_for(cfg, opts.image_id, parts);
        lc = lc.with_subdatabase(idx);
        subdatabase = Some(idx);
    }
    let lifter = Lifter::new(lc, codebook.as_ref())?;
    let lifts = lifter.lift_image(&points, labels.as_deref(), opts.image_id)?;
    let subs: Vec<AffineSubspace> = lifts.iter().map(|l| l.subspace.clone()).collect();
    ensure_parent(out)?;
    VectorSet::from_primal(&subs)?.save(out)?;

    let secrets_path = sidecar(out, SECRETS_SUFFIX);
    let secrets = if opts.test_mode {
        let s = Secrets {
            format_version: REPORT_FORMAT_VERSION,
            config: serde_json::to_value(cfg)?,
            strategy: cfg.strategy,
            m: cfg.m,
            image_id: opts.image_id,
            subdatabase,
            codebook: db.map(Path::to_path_buf),
            features: lifts
                .iter()
                .enumerate()
                .map(|(i, l)| SecretFeature {
                    keypoint_id: l.keypoint_id,
                    descriptor: points.row(i).to_vec(),
                    label: labels.as_ref().map(|v| v[i]),
                    samples: l.samples.clone().unwrap_or_default(),
                })
                .collect(),
        };
        write_json(&secrets_path, &s)?;
        Some(secrets_path)
    } else {
        // A sidecar left by an earlier test-mode run would no longer match.
        remove_stale(&secrets_path)?;
        None
    };
    Ok(LiftOutcome {
        output: out.to_path_buf(),
        count: subs.len(),
        subdatabase,
        secrets,
    })
}

// ------------------------------------------------------------------- match

/// One loaded side of a match, in the representation distances use.
#[derive(Clone, Debug)]
pub enum Side {
    Points(RowMatrix),
    Primal(Vec<AffineSubspace>),
    Dual(Vec<DualSubspace>),
}

impl Side {
    pub fn load(set: &VectorSet) -> CliResult<Self> {
        Ok(match set.kind() {
            RecordKind::Descriptor => Side::Points(set.to_descriptors()?),
            RecordKind::Primal => Side::Primal(set.to_primal()?),
            RecordKind::Dual => Side::Dual(set.to_dual()?),
        })
    }

    pub fn items(&self) -> ItemSet<'_> {
        match self {
            Side::Points(p) => ItemSet::Points(p),
            Side::Primal(s) => ItemSet::Primal(s),
            Side::Dual(s) => ItemSet::Dual(s),
        }
    }

    fn into_dual(self) -> Self {
        match self {
            Side::Primal(s) => Side::Dual(s.iter().map(AffineSubspace::to_dual).collect()),
            other => other,
        }
    }

    fn into_primal(self) -> Self {
        match self {
            Side::Dual(s) => Side::Primal(s.iter().map(DualSubspace::to_primal).collect()),
            other => other,
        }
    }

    fn is_subspace(&self) -> bool {
        !matches!(self, Side::Points(_))
    }
}

/// Distance mode and representation for two loaded files. Mixed primal and
/// dual files are rejected; otherwise subspace sides are converted to the
/// representation the size rule prefers.
pub fn plan(q: &VectorSet, r: &VectorSet) -> CliResult<(Side, Side, DistanceMode, &'static str)> {
    if q.dim() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: r.dim(),
        }
        .into());
    }
    use RecordKind::*;
    let n = q.dim();
    let (qs, rs) = (Side::load(q)?, Side::load(r)?);
    match (q.kind(), r.kind()) {
        (Descriptor, Descriptor) => Ok((qs, rs, DistanceMode::P2p, "points")),
        (Primal, Dual) | (Dual, Primal) => Err(Error::IncompatibleKinds(
            "one file holds primal and the other dual subspaces; convert one first".into(),
        )
        .into()),
        (Descriptor, _) | (_, Descriptor) => {
            let m = q.subspace_dim().max(r.subspace_dim());
            let dual = choose_representation(n, m)?.use_dual_p2s;
            let conv = |s: Side| if !s.is_subspace() { s } else if dual { s.into_dual() } else { s.into_primal() };
            Ok((conv(qs), conv(rs), DistanceMode::P2s, if dual { "dual" } else { "primal" }))
        }
        _ => {
            let m = q.subspace_dim().max(r.subspace_dim());
            let dual = choose_representation(n, m)?.use_dual_s2s;
            let conv = |s: Side| if dual { s.into_dual() } else { s.into_primal() };
            Ok((conv(qs), conv(rs), DistanceMode::S2s, if dual { "dual" } else { "primal" }))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchSummary {
    pub queries: PathBuf,
    pub refs: PathBuf,
    pub mode: DistanceMode,
    pub representation: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub distance_ms: f64,
    /// Scored against the row-`i` ↔ row-`i` correspondence.
    pub report: MatchReport,
}

#[derive(Clone, Debug)]
pub struct MatchOutcome {
    pub summary: MatchSummary,
    pub matches: MatchSet,
    pub distances: DistanceMatrix,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

#[derive(Serialize)]
struct MatchCsvRow {
    query: usize,
    reference: usize,
    distance: f64,
}

pub fn match_files(cfg: &RunConfig, queries: &Path, refs: &Path, prefix: &Path) -> CliResult<MatchOutcome> {
    cfg.validate()?;
    let (q, r) = (VectorSet::load(queries)?, VectorSet::load(refs)?);
    let (qs, rs, mode, representation) = plan(&q, &r)?;
    let t = Instant::now();
    let dm = distance_matrix(qs.items(), rs.items(), mode)?;
    let distance_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut matches = mutual_nn(&dm);
    if let Some(ratio) = cfg.ratio {
        matches = ratio_filter(&dm, &matches, ratio, cfg.tau_intersect)?;
    }
    let report = score(&matches, dm.rows(), dm.cols(), cfg.tau_intersect);
    let summary = MatchSummary {
        queries: queries.to_path_buf(),
        refs: refs.to_path_buf(),
        mode,
        representation,
        rows: dm.rows(),
        cols: dm.cols(),
        distance_ms,
        report,
    };
    let report_path = sidecar(prefix, ".report.json");
    let csv_path = sidecar(prefix, ".matches.csv");
    ensure_parent(&report_path)?;
    write_json(&report_path, &envelope("match", cfg, &summary))?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    for p in &matches.pairs {
        w.serialize(MatchCsvRow {
            query: p.query,
            reference: p.reference,
            distance: p.distance,
        })?;
    }
    w.flush()?;
    Ok(MatchOutcome {
        summary,
        matches,
        distances: dm,
        report_path,
        csv_path,
    })
}

// ------------------------------------------------------------------ attack

#[derive(Clone, Debug, Serialize)]
pub struct AttackSummary {
    pub source: Option<PathBuf>,
    pub rows: Vec<AttackRow>,
    pub cells: Vec<CellExtras>,
    pub knn: Option<KnnSummary>,
}

/// Per-cell values beyond the CSV columns.
#[derive(Clone, Debug, Serialize)]
pub struct CellExtras {
    pub strategy: Strategy,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_projected_dist: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KnnSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: Option<f64>,
    pub raw_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub summary: AttackSummary,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

fn split_cells(cells: &[AttackCell]) -> (Vec<AttackRow>, Vec<CellExtras>) {
    let rows = cells.iter().map(|c| c.summary.clone()).collect();
    let extras = cells
        .iter()
        .map(|c| CellExtras {
            strategy: c.summary.strategy,
            m: c.summary.m,
            k: c.summary.k,
            mean_projected_dist: c.mean_projected_dist,
        })
        .collect();
    (rows, extras)
}

fn write_attack(cfg: &RunConfig, summary: AttackSummary, prefix: &Path) -> CliResult<AttackOutcome> {
    let report_path = sidecar(prefix, ".attack.json");
    let csv_path = sidecar(prefix, ".attack.csv");
    ensure_parent(&report_path)?;
    write_json(&report_path, &envelope("attack", cfg, &summary))?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &summary.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(AttackOutcome {
        summary,
        report_path,
        csv_path,
    })
}

/// Recovery and attribute attacks on a lifted file. Needs the test-mode
/// sidecar for ground truth; without it the run fails with
/// `MetadataMissing`.
pub fn attack(cfg: &RunConfig, subspaces: &Path, secrets: Option<&Path>, db: &Path, prefix: &Path) -> CliResult<AttackOutcome> {
    cfg.validate()?;
    let secrets_path = secrets.map_or_else(|| sidecar(subspaces, SECRETS_SUFFIX), Path::to_path_buf);
    if !secrets_path.exists() {
        return Err(Error::MetadataMissing.into());
    }
    let sec: Secrets = read_json(&secrets_path)?;
    let set = VectorSet::load(subspaces)?;
    let subs = match Side::load(&set)? {
        Side::Primal(s) => s,
        Side::Dual(s) => s.iter().map(DualSubspace::to_primal).collect(),
        Side::Points(_) => return Err(Error::IncompatibleKinds("attack expects lifted subspaces".into()).into()),
    };
    if sec.features.len() != subs.len() {
        return Err(CliError::Data(format!(
            "sidecar describes {} features, {} holds {}",
            sec.features.len(),
            subspaces.display(),
            subs.len()
        )));
    }
    let descriptors = RowMatrix::from_rows(&sec.features.iter().map(|f| f.descriptor.clone()).collect::<Vec<_>>())?;
    let lifts = subs
        .into_iter()
        .zip(&sec.features)
        .map(|(subspace, f)| LiftedFeature {
            subspace,
            keypoint_id: f.keypoint_id,
            samples: Some(f.samples.clone()),
        })
        .collect();
    let targets = LiftedTargets { descriptors, lifts };
    let db_set = load_codebook(db)?;
    let planted = match &sec.codebook {
        Some(p) if p.exists() => Some(load_codebook(p)?),
        _ => None,
    };
    let cells = attack_cells_with(db_set.centroids(), planted.as_ref().map(LiftingCodebook::centroids), sec.strategy, sec.m, &targets, &cfg.oracle_ks)?;
    let truth: Option<Vec<u32>> = sec.features.iter().map(|f| f.label).collect();
    let knn = match (db_set.labels(), truth) {
        (Some(labels), Some(truth)) => {
            let subs: Vec<AffineSubspace> = targets.lifts.iter().map(|l| l.subspace.clone()).collect();
            let lifted: KnnOutcome = knn_attribute_attack(Targets::Lifted(&subs), db_set.centroids(), labels, cfg.k, Some(&truth))?;
            let raw = knn_attribute_attack(Targets::Points(&targets.descriptors), db_set.centroids(), labels, cfg.k, Some(&truth))?;
            Some(KnnSummary {
                k: cfg.k,
                accuracy: lifted.accuracy,
                raw_accuracy: raw.accuracy,
            })
        }
        _ => None,
    };
    let (rows, extras) = split_cells(&cells);
    write_attack(
        cfg,
        AttackSummary {
            source: Some(subspaces.to_path_buf()),
            rows,
            cells: extras,
            knn,
        },
        prefix,
    )
}

/// The strategy × `m` × `K` grid on the configured synthetic world.
pub fn attack_grid(cfg: &RunConfig, prefix: &Path) -> CliResult<AttackOutcome> {
    cfg.validate()?;
    cfg.check_ms("attack_ms", &cfg.attack_ms)?;
    let world = SyntheticWorld::build(cfg.world_params())?;
    let camp = CampaignConfig {
        strategies: cfg.attack_strategies.clone(),
        ms: cfg.attack_ms.clone(),
        ks: cfg.oracle_ks.clone(),
        targets: cfg.attack_targets,
        seed: cfg.seed,
    };
    let report = attack_campaign(&world, &camp)?;
    let (rows, extras) = split_cells(&report.cells);
    write_attack(
        cfg,
        AttackSummary {
            source: None,
            rows,
            cells: extras,
            knn: None,
        },
        prefix,
    )
}

// ------------------------------------------------------------------- bench

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub mode: DistanceMode,
    pub m: usize,
    pub representation: String,
    pub rows: usize,
    pub cols: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub threads: usize,
    pub cells: Vec<BenchCell>,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub summary: BenchSummary,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Runs `f` `reps` times and returns the wall-clock milliseconds of each.
pub fn time_reps<T>(reps: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<Vec<f64>> {
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(f()?);
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

fn cell(mode: DistanceMode, m: usize, representation: &str, rows: usize, cols: usize, times: &[f64]) -> BenchCell {
    BenchCell {
        mode,
        m,
        representation: representation.to_string(),
        rows,
        cols,
        reps: times.len(),
        mean_ms: stats::mean(times),
        std_ms: if times.len() > 1 { stats::std_dev(times) } else { 0.0 },
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Timing of the `per_image × per_image` distance matrix for s2s and p2s
/// at every `bench_ms`, on randomly lifted descriptors of the configured
/// model.
pub fn bench(cfg: &RunConfig, prefix: &Path) -> CliResult<BenchOutcome> {
    cfg.validate()?;
    cfg.check_ms("bench_ms", &cfg.bench_ms)?;
    if cfg.bench_reps == 0 {
        return Err(CliError::Config("bench_reps must be positive".into()));
    }
    let model = cfg.world_params().model()?;
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, 30));
    let a = model.sample(cfg.per_image, &mut r).points;
    let b = model.sample(cfg.per_image, &mut r).points;
    let lift_all = |points: &RowMatrix, m: usize, image: u64| -> CliResult<Vec<AffineSubspace>> {
        let lifter = Lifter::new(LiftConfig::new(m, Strategy::Random, cfg.seed), None)?;
        Ok(lifter.lift_image(points, None, image)?.into_iter().map(|l| l.subspace).collect())
    };
    let mut cells = Vec::new();
    for (mode, use_dual) in [
        (DistanceMode::S2s, (|c: affine_lift::distance::RepresentationChoice| c.use_dual_s2s) as fn(_) -> bool),
        (DistanceMode::P2s, |c| c.use_dual_p2s),
    ] {
        for &m in &cfg.bench_ms {
            let sa = lift_all(&a, m, 0)?;
            let dual = use_dual(choose_representation(cfg.n, m)?);
            let qa = if dual { Side::Dual(sa.iter().map(AffineSubspace::to_dual).collect()) } else { Side::Primal(sa) };
            let rb = match mode {
                DistanceMode::S2s => {
                    let sb = lift_all(&b, m, 1)?;
                    if dual { Side::Dual(sb.iter().map(AffineSubspace::to_dual).collect()) } else { Side::Primal(sb) }
                }
                _ => Side::Points(b.clone()),
            };
            let times = time_reps(cfg.bench_reps, || Ok(distance_matrix(qa.items(), rb.items(), mode)?))?;
            cells.push(cell(mode, m, if dual { "dual" } else { "primal" }, a.rows(), b.rows(), &times));
        }
    }
    let summary = BenchSummary {
        threads: rayon::current_num_threads(),
        cells,
    };
    let report_path = sidecar(prefix, ".bench.json");
    let csv_path = sidecar(prefix, ".bench.csv");
    ensure_parent(&report_path)?;
    write_json(&report_path, &envelope("bench", cfg, &summary))?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    for c in &summary.cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(BenchOutcome {
        summary,
        report_path,
        csv_path,
    })
}
