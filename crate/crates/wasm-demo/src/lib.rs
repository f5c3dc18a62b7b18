//! JSON-in, JSON-out operations behind the browser demo in `www/`. The
//! plain functions are what the native tests call; the `wasm_bindgen`
//! wrappers only convert errors.

use affine_lift::attacks::{attack_cells, lift_targets};
use affine_lift::codebook::{random_unit, split_database, LiftingCodebook};
use affine_lift::distance::{point_to_subspace, subspace_distance, subspace_to_subspace_dual};
use affine_lift::lifting::{LiftConfig, Lifter, Strategy};
use affine_lift::linalg::dist;
use affine_lift::matching::{measure_collision_rate, SyntheticWorld, WorldParams};
use affine_lift::{rng, AffineSubspace, RowMatrix};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Deserialize)]
pub struct Flat {
    pub origin: Vec<f64>,
    /// Spanning directions; empty for a point. Need not be orthonormal.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct ClosestInput {
    pub a: Flat,
    pub b: Flat,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ClosestOutput {
    pub distance: f64,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    /// Same distance from the normal-set solver; absent when a side is a point.
    pub dual_distance: Option<f64>,
    pub dims: [usize; 2],
}

fn flat(f: &Flat) -> DemoResult<Option<AffineSubspace>> {
    if f.origin.len() != 3 || f.directions.iter().any(|d| d.len() != 3) {
        return Err("every vector must have three coordinates".into());
    }
    if f.directions.is_empty() {
        return Ok(None);
    }
    AffineSubspace::from_directions(f.origin.clone(), &f.directions).map(Some).map_err(err)
}

/// Closest points between two points, lines or planes of ℝ³.
pub fn closest_points(input: &ClosestInput) -> DemoResult<ClosestOutput> {
    let (a, b) = (flat(&input.a)?, flat(&input.b)?);
    let dims = [a.as_ref().map_or(0, |s| s.subspace_dim()), b.as_ref().map_or(0, |s| s.subspace_dim())];
    Ok(match (a, b) {
        (None, None) => ClosestOutput {
            distance: dist(&input.a.origin, &input.b.origin),
            x_star: input.a.origin.clone(),
            y_star: input.b.origin.clone(),
            dual_distance: None,
            dims,
        },
        (None, Some(s)) => ClosestOutput {
            distance: point_to_subspace(&s, &input.a.origin).map_err(err)?,
            x_star: input.a.origin.clone(),
            y_star: s.project(&input.a.origin).map_err(err)?,
            dual_distance: None,
            dims,
        },
        (Some(s), None) => ClosestOutput {
            distance: point_to_subspace(&s, &input.b.origin).map_err(err)?,
            x_star: s.project(&input.b.origin).map_err(err)?,
            y_star: input.b.origin.clone(),
            dual_distance: None,
            dims,
        },
        (Some(a), Some(b)) => {
            let pair = subspace_distance(&a, &b).map_err(err)?;
            let dual = subspace_to_subspace_dual(&a.to_dual(), &b.to_dual()).map_err(err)?;
            ClosestOutput {
                distance: pair.distance,
                x_star: pair.x_star,
                y_star: pair.y_star,
                dual_distance: Some(dual.distance),
                dims,
            }
        }
    })
}

#[derive(Debug, Deserialize)]
pub struct CollisionInput {
    /// Codebook entries.
    pub entries: usize,
    pub subdatabases: usize,
    pub m: usize,
    /// Descriptors per image at each point of the curve.
    pub per_image: Vec<usize>,
    pub seeds: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct CollisionPoint {
    pub per_image: usize,
    /// Measured fraction of image-2 samples already drawn by image 1.
    pub shared: f64,
    /// Samples per image over entries.
    pub nominal: f64,
    /// Expected fraction of distinct entries image 1 touched.
    pub expected: f64,
    /// Same measurement with the images on different sub-databases.
    pub disjoint: f64,
}

/// Cross-image sample collisions under adversarial lifting, with one shared
/// database and with disjoint sub-databases.
pub fn collision_curve(input: &CollisionInput) -> DemoResult<Vec<CollisionPoint>> {
    if input.seeds == 0 || input.seeds > 200 || input.entries > 20_000 || input.per_image.iter().any(|&p| p == 0 || p > 2000) {
        return Err("keep seeds in 1..=200, entries <= 20000 and per_image in 1..=2000".into());
    }
    if input.subdatabases < 2 {
        return Err("need at least two sub-databases for the disjoint case".into());
    }
    let n = 16;
    let mut r = rng::seeded(input.seed);
    let rows: Vec<Vec<f64>> = (0..input.entries).map(|_| random_unit(n, &mut r)).collect();
    let cb = LiftingCodebook::new(RowMatrix::from_rows(&rows).map_err(err)?).map_err(err)?;
    let split = split_database(&cb, input.subdatabases, rng::derive_seed(input.seed, 1)).map_err(err)?;
    let mut out = Vec::new();
    for &per in &input.per_image {
        let (mut shared, mut disjoint) = (0.0, 0.0);
        for s in 0..input.seeds {
            let seed = rng::derive_seed(input.seed, 100 + s);
            let mut g = rng::seeded(seed);
            let descs: Vec<Vec<f64>> = (0..2 * per).map(|_| random_unit(n, &mut g)).collect();
            let lift = |cfg: LiftConfig, book: &LiftingCodebook, first: usize, image: u64| -> DemoResult<Vec<_>> {
                let lifter = Lifter::new(cfg.with_test_mode(true), Some(book)).map_err(err)?;
                descs[first..first + per]
                    .iter()
                    .enumerate()
                    .map(|(k, d)| lifter.lift(d, None, image, k as u64).map_err(err))
                    .collect()
            };
            let cfg = LiftConfig::new(input.m, Strategy::Adversarial, seed);
            shared += measure_collision_rate(&lift(cfg.clone(), &cb, 0, 0)?, &lift(cfg, &cb, per, 1)?).map_err(err)?;
            let sub = |i| LiftConfig::new(input.m, Strategy::SubAdversarial, seed).with_subdatabase(i);
            disjoint += measure_collision_rate(&lift(sub(0), &split, 0, 0)?, &lift(sub(1), &split, per, 1)?).map_err(err)?;
        }
        let draws = (per * input.m) as f64;
        let s = input.entries as f64;
        out.push(CollisionPoint {
            per_image: per,
            shared: shared / input.seeds as f64,
            nominal: draws / s,
            expected: 1.0 - (1.0 - 1.0 / s).powf(draws),
            disjoint: disjoint / input.seeds as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
pub struct AttackInput {
    pub n: usize,
    pub m: usize,
    pub strategy: Strategy,
    pub targets: usize,
    pub ks: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct AttackPoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_dist: f64,
    pub mean_projected_dist: f64,
    pub top1_rate: f64,
    pub confusion_rate: f64,
}

/// Recovery attacks on lifted descriptors of a small synthetic world.
pub fn attack_demo(input: &AttackInput) -> DemoResult<Vec<AttackPoint>> {
    if input.n < 4 || input.n > 256 || input.targets == 0 || input.targets > 1000 {
        return Err("keep n in 4..=256 and targets in 1..=1000".into());
    }
    let world = SyntheticWorld::build(WorldParams {
        n: input.n,
        clusters: 128,
        corpus_sigma: 0.05,
        corpus_size: 2048,
        codebook_size: 256,
        subdatabases: 8,
        kmeans_iters: 4,
        label_classes: None,
        attribute_shift: 0.0,
        seed: input.seed,
    })
    .map_err(err)?;
    let targets = lift_targets(&world, input.strategy, input.m, input.targets, input.seed).map_err(err)?;
    let cells = attack_cells(&world, input.strategy, input.m, &targets, &input.ks).map_err(err)?;
    Ok(cells
        .into_iter()
        .map(|c| AttackPoint {
            k: c.summary.k,
            mean_dist: c.summary.mean_dist,
            mean_projected_dist: c.mean_projected_dist,
            top1_rate: c.summary.top1_rate,
            confusion_rate: c.summary.confusion_rate,
        })
        .collect())
}

fn run<I: for<'de> Deserialize<'de>, O: Serialize>(json: &str, f: impl FnOnce(&I) -> DemoResult<O>) -> DemoResult<String> {
    let input: I = serde_json::from_str(json).map_err(err)?;
    serde_json::to_string(&f(&input)?).map_err(err)
}

#[wasm_bindgen(js_name = closestPoints3d)]
pub fn closest_points_3d(json: &str) -> Result<String, JsError> {
    run(json, closest_points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = collisionCurve)]
pub fn collision_curve_json(json: &str) -> Result<String, JsError> {
    run(json, collision_curve).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = attackDemo)]
pub fn attack_demo_json(json: &str) -> Result<String, JsError> {
    run(json, attack_demo).map_err(|e| JsError::new(&e))
}

/// The plain entry points behind the exports, for native callers.
pub fn call(op: &str, json: &str) -> DemoResult<String> {
    match op {
        "closest_points" => run(json, closest_points),
        "collision_curve" => run(json, collision_curve),
        "attack_demo" => run(json, attack_demo),
        other => Err(format!("unknown operation {other}")),
    }
}
