use std::path::Path;
use std::process::Command;

use affine_lift::attacks::{nna_attack, oracle_attack};
use affine_lift::codebook::random_unit;
use affine_lift::distance::{pair_distance, DistanceMode};
use affine_lift::format::{RecordKind, VectorSet};
use affine_lift::{rng, RowMatrix};
use affine_lift_cli::commands::{self, sidecar, LiftOptions};
use affine_lift_cli::RunConfig;
use rand::Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_affine-lift"))
}

fn tiny() -> RunConfig {
    RunConfig::parse_str(
        "n = 16\nclusters = 8\ncorpus_size = 256\ncodebook_size = 8\nS = 4\nkmeans_iters = 4\nper_image = 40\n",
    )
    .unwrap()
}

fn random_set(n: usize, count: usize, seed: u64, path: &Path) -> RowMatrix {
    let mut r = rng::seeded(seed);
    let rows: Vec<Vec<f64>> = (0..count).map(|_| random_unit(n, &mut r)).collect();
    let m = RowMatrix::from_rows(&rows).unwrap();
    VectorSet::from_descriptors(&m).unwrap().save(path).unwrap();
    m
}

#[test]
fn build_db_tiny_partition_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let a = dir.path().join("a.ppvf");
    let b = dir.path().join("b.ppvf");
    let out = commands::build_db(&cfg, &a).unwrap();
    commands::build_db(&cfg, &b).unwrap();
    assert_eq!(out.subdatabase_sizes, vec![2, 2, 2, 2]);
    let set = VectorSet::load(&a).unwrap();
    assert_eq!((set.len(), set.kind()), (8, RecordKind::Descriptor));
    assert!(set.is_unit_norm());
    let cb = commands::load_codebook(&a).unwrap();
    assert_eq!(cb.subdatabase_count(), 4);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(sidecar(&a, ".partition.json")).unwrap(),
        std::fs::read(sidecar(&b, ".partition.json")).unwrap()
    );
}

#[test]
fn build_db_desk_scale_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["n=8".into(), "codebook_size=8192".into(), "S=16".into(), "corpus_size=8192".into(), "clusters=64".into(), "kmeans_iters=1".into()])
        .unwrap();
    let out = commands::build_db(&cfg, &dir.path().join("db.ppvf")).unwrap();
    assert_eq!(out.subdatabase_sizes, vec![512; 16]);
}

#[test]
fn build_db_non_divisible_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["S=3".into()]).unwrap();
    let e = commands::build_db(&cfg, &dir.path().join("db.ppvf")).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn lift_three_descriptors_deploy_and_test_mode() {
    let dir = tempfile::tempdir().unwrap();
    let descs = dir.path().join("d.ppvf");
    let raw = random_set(16, 3, 1, &descs);
    let mut cfg = tiny();
    cfg.apply_overrides(&["strategy=random".into()]).unwrap();
    let out = dir.path().join("l.ppvf");
    let l = commands::lift(&cfg, &descs, None, &out, &LiftOptions::default()).unwrap();
    assert_eq!(l.count, 3);
    assert!(l.secrets.is_none());
    assert!(!sidecar(&out, ".SECRETS.json").exists());
    let set = VectorSet::load(&out).unwrap();
    assert_eq!((set.len(), set.kind(), set.subspace_dim()), (3, RecordKind::Primal, 2));
    // Loading and saving reproduces the file exactly.
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(set.to_bytes(), bytes);
    // Each lift still contains its descriptor, up to f32 storage.
    for (i, s) in set.to_primal().unwrap().iter().enumerate() {
        assert!(affine_lift::distance::point_to_subspace(s, raw.row(i)).unwrap() < 1e-5);
    }

    let t = commands::lift(&cfg, &descs, None, &out, &LiftOptions { test_mode: true, ..Default::default() }).unwrap();
    let secrets = t.secrets.unwrap();
    let s: commands::Secrets = serde_json::from_str(&std::fs::read_to_string(&secrets).unwrap()).unwrap();
    assert_eq!(s.features.len(), 3);
    // A later deploy run clears the stale sidecar.
    commands::lift(&cfg, &descs, None, &out, &LiftOptions::default()).unwrap();
    assert!(!secrets.exists());
}

#[test]
fn lift_without_codebook_for_adversarial_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let descs = dir.path().join("d.ppvf");
    random_set(16, 3, 1, &descs);
    let mut cfg = tiny();
    cfg.apply_overrides(&["strategy=adversarial".into()]).unwrap();
    let e = commands::lift(&cfg, &descs, None, &dir.path().join("o.ppvf"), &LiftOptions::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn match_mode_selection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let s = commands::synth(&cfg, &dir.path().join("p")).unwrap();
    let o = commands::match_files(&cfg, &s.queries, &s.refs, &dir.path().join("pp")).unwrap();
    assert_eq!(o.summary.mode, DistanceMode::P2p);
    assert_eq!(o.summary.report.precision, 1.0);
    let lifted = dir.path().join("q.ppvf");
    commands::lift(&cfg, &s.queries, None, &lifted, &LiftOptions::default()).unwrap();
    let o = commands::match_files(&cfg, &lifted, &s.refs, &dir.path().join("ps")).unwrap();
    assert_eq!((o.summary.mode, o.summary.representation), (DistanceMode::P2s, "primal"));
    let o = commands::match_files(&cfg, &s.refs, &lifted, &dir.path().join("sp")).unwrap();
    assert_eq!(o.summary.mode, DistanceMode::P2s);
    let text = std::fs::read_to_string(&o.report_path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["config"]["n"], 16);
    let csv = std::fs::read_to_string(&o.csv_path).unwrap();
    assert!(csv.starts_with("query,reference,distance\n"));
}

#[test]
fn match_high_m_goes_dual_and_mixed_kinds_fail() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["m=10".into(), "per_image=10".into()]).unwrap();
    let s = commands::synth(&cfg, &dir.path().join("p")).unwrap();
    let lifted = dir.path().join("q.ppvf");
    commands::lift(&cfg, &s.queries, None, &lifted, &LiftOptions::default()).unwrap();
    let o = commands::match_files(&cfg, &lifted, &s.refs, &dir.path().join("ps")).unwrap();
    assert_eq!(o.summary.representation, "dual");

    let set = VectorSet::load(&lifted).unwrap();
    let duals: Vec<_> = set.to_primal().unwrap().iter().map(|x| x.to_dual()).collect();
    let dual_path = dir.path().join("dual.ppvf");
    VectorSet::from_dual(&duals).unwrap().save(&dual_path).unwrap();
    let e = commands::match_files(&cfg, &lifted, &dual_path, &dir.path().join("x")).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("primal"), "{e}");
}

#[test]
fn match_1000_s2s_spot_check_and_timing_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let qd = dir.path().join("q.ppvf");
    let rd = dir.path().join("r.ppvf");
    random_set(128, 1000, 5, &qd);
    random_set(128, 1000, 6, &rd);
    let (ql, rl) = (dir.path().join("ql.ppvf"), dir.path().join("rl.ppvf"));
    commands::lift(&cfg, &qd, None, &ql, &LiftOptions::default()).unwrap();
    commands::lift(&cfg, &rd, None, &rl, &LiftOptions { image_id: 1, ..Default::default() }).unwrap();
    let out = bin()
        .args(["match", ql.to_str().unwrap(), rl.to_str().unwrap(), "-o"])
        .arg(dir.path().join("m"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("distance matrix 1000x1000 (s2s, primal):"), "{stdout}");
    assert!(stdout.lines().next().unwrap().ends_with(" ms"));

    let o = commands::match_files(&cfg, &ql, &rl, &dir.path().join("m2")).unwrap();
    let q = commands::Side::load(&VectorSet::load(&ql).unwrap()).unwrap();
    let r = commands::Side::load(&VectorSet::load(&rl).unwrap()).unwrap();
    let mut g = rng::seeded(7);
    for _ in 0..100 {
        let (i, j) = (g.random_range(0..1000), g.random_range(0..1000));
        let single = pair_distance(q.items(), i, r.items(), j).unwrap();
        assert!((o.distances.get(i, j) - single).abs() < 1e-9, "cell ({i}, {j})");
    }
}

#[test]
fn attack_needs_sidecar_and_k1_oracle_is_nna() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["codebook_size=64".into(), "corpus_size=1024".into(), "clusters=32".into(), "strategy=hybrid".into(), "oracle_ks=1,3,8".into(), "label_classes=3".into(), "k=5".into()])
        .unwrap();
    let db = dir.path().join("db.ppvf");
    commands::build_db(&cfg, &db).unwrap();
    let s = commands::synth(&cfg, &dir.path().join("p")).unwrap();
    let deploy = dir.path().join("deploy.ppvf");
    commands::lift(&cfg, &s.queries, Some(&db), &deploy, &LiftOptions::default()).unwrap();
    let e = commands::attack(&cfg, &deploy, None, &db, &dir.path().join("a")).unwrap_err();
    assert_eq!(e.to_string(), affine_lift::Error::MetadataMissing.to_string());
    assert_eq!(e.exit_code(), 3);

    let lifted = dir.path().join("test.ppvf");
    commands::lift(&cfg, &s.queries, Some(&db), &lifted, &LiftOptions { test_mode: true, ..Default::default() }).unwrap();
    let a = commands::attack(&cfg, &lifted, None, &db, &dir.path().join("a")).unwrap();
    assert_eq!(a.summary.rows.len(), 3);
    assert!(a.summary.knn.as_ref().unwrap().accuracy.is_some());
    let csv = std::fs::read_to_string(&a.csv_path).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "strategy,m,K,mean_dist,p50_dist,p90_dist,top1_rate,confusion_rate"
    );
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a.report_path).unwrap()).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["config"]["strategy"], "hybrid");

    let cb = commands::load_codebook(&db).unwrap();
    let subs = VectorSet::load(&lifted).unwrap().to_primal().unwrap();
    let d = VectorSet::load(&s.queries).unwrap().to_descriptors().unwrap();
    for (i, sub) in subs.iter().enumerate().take(10) {
        let (v, idx) = nna_attack(sub, cb.centroids()).unwrap();
        let o = oracle_attack(sub, cb.centroids(), 1, d.row(i), false).unwrap();
        assert_eq!((o.index, &o.recovered), (idx, &v));
    }
}

#[test]
fn attack_campaign_small_grid_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&[
        "n=64".into(),
        "codebook_size=256".into(),
        "corpus_size=2048".into(),
        "clusters=64".into(),
        "attack_strategies=random,sub_hybrid".into(),
        "attack_ms=2,4".into(),
        "attack_targets=100".into(),
        "oracle_ks=1,4".into(),
    ])
    .unwrap();
    let t = std::time::Instant::now();
    let a = commands::attack_grid(&cfg, &dir.path().join("g")).unwrap();
    assert!(t.elapsed().as_secs() < 60);
    assert_eq!(a.summary.rows.len(), 2 * 2 * 2);
}

#[test]
fn bench_cells_mirror_the_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["bench_reps=2".into(), "per_image=30".into()]).unwrap();
    let b = commands::bench(&cfg, &dir.path().join("b")).unwrap();
    let cells: Vec<(DistanceMode, usize)> = b.summary.cells.iter().map(|c| (c.mode, c.m)).collect();
    assert_eq!(
        cells,
        vec![
            (DistanceMode::S2s, 2),
            (DistanceMode::S2s, 4),
            (DistanceMode::S2s, 8),
            (DistanceMode::P2s, 2),
            (DistanceMode::P2s, 4),
            (DistanceMode::P2s, 8)
        ]
    );
    assert!(b.summary.cells.iter().all(|c| c.reps == 2 && c.mean_ms >= 0.0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&b.report_path).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 6);
    assert!(v["config"].is_object());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "n = 16\nmystery = 1\n").unwrap();
    let st = bin().arg("-c").arg(&cfg_path).arg("bench").status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["frobnicate"]).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let junk = dir.path().join("junk.ppvf");
    std::fs::write(&junk, b"not a vector file at all, sorry").unwrap();
    let st = bin().arg("match").arg(&junk).arg(&junk).arg("-o").arg(dir.path().join("m")).status().unwrap();
    assert_eq!(st.code(), Some(3));

    // A codebook of one repeated direction cannot span two directions.
    let e = random_unit(16, &mut rng::seeded(3));
    let db = dir.path().join("flat.ppvf");
    VectorSet::from_descriptors(&RowMatrix::from_rows(&vec![e; 8]).unwrap()).unwrap().save(&db).unwrap();
    let descs = dir.path().join("d.ppvf");
    random_set(16, 2, 4, &descs);
    let st = bin()
        .args(["--set", "n=16", "--set", "strategy=adversarial", "lift"])
        .arg(&descs)
        .arg("--db")
        .arg(&db)
        .arg("-o")
        .arg(dir.path().join("o.ppvf"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(4));

    let ok = bin().args(["--set", "n=16", "show-config"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(RunConfig::parse_str(&text).unwrap().n, 16);
}
