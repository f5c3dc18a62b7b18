//! `key = value` run configuration. Blank lines and `#` comments are
//! skipped, every key may appear once, unknown keys are rejected. Lists are
//! comma separated and optional values accept `none`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use affine_lift::lifting::Strategy;
use affine_lift::matching::WorldParams;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubdatabasePolicy {
    /// Each image draws its sub-database from the seed and its image id.
    Uniform,
    /// Every image uses `subdatabase_index`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub strategy: Strategy,
    pub hybrid_random_count: Option<usize>,
    pub subdatabases: usize,
    pub subdatabase_policy: SubdatabasePolicy,
    pub subdatabase_index: usize,
    pub seed: u64,
    pub tau_intersect: f64,
    pub ratio: Option<f64>,
    /// Neighbours of the attribute attack.
    pub k: usize,
    /// Candidate counts of the oracle attack; 1 is the nearest-neighbour attack.
    pub oracle_ks: Vec<usize>,
    pub clusters: usize,
    pub corpus_sigma: f64,
    pub corpus_size: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub label_classes: Option<u32>,
    pub attribute_shift: f64,
    pub per_image: usize,
    pub noise_sigma: f64,
    pub bench_reps: usize,
    pub bench_ms: Vec<usize>,
    pub attack_strategies: Vec<Strategy>,
    pub attack_ms: Vec<usize>,
    pub attack_targets: usize,
    pub output: Option<PathBuf>,
}

pub const KEYS: [&str; 29] = [
    "n",
    "m",
    "strategy",
    "hybrid_random_count",
    "subdatabases",
    "subdatabase_policy",
    "subdatabase_index",
    "seed",
    "tau_intersect",
    "ratio",
    "k",
    "oracle_ks",
    "clusters",
    "corpus_sigma",
    "corpus_size",
    "codebook_size",
    "kmeans_iters",
    "label_classes",
    "attribute_shift",
    "per_image",
    "noise_sigma",
    "bench_reps",
    "bench_ms",
    "attack_strategies",
    "attack_ms",
    "attack_targets",
    "output",
    // accepted spellings of the two single-letter knobs
    "S",
    "K",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 128,
            m: 2,
            strategy: Strategy::Random,
            hybrid_random_count: None,
            subdatabases: 16,
            subdatabase_policy: SubdatabasePolicy::Uniform,
            subdatabase_index: 0,
            seed: 0,
            tau_intersect: affine_lift::distance::DEFAULT_TAU_INTERSECT,
            ratio: None,
            k: 10,
            oracle_ks: vec![1, 2, 4, 8, 16],
            clusters: 512,
            corpus_sigma: 0.1,
            corpus_size: 65536,
            codebook_size: 8192,
            kmeans_iters: 10,
            label_classes: None,
            attribute_shift: 0.0,
            per_image: 1000,
            noise_sigma: 0.02,
            bench_reps: 100,
            bench_ms: vec![2, 4, 8],
            attack_strategies: vec![Strategy::Random, Strategy::Adversarial, Strategy::Hybrid, Strategy::SubHybrid],
            attack_ms: vec![2, 4, 8],
            attack_targets: 200,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> CliResult<Option<T>>
where
    T::Err: Display,
{
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    let items = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<CliResult<Vec<T>>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = canonical(k.trim());
            if seen.contains(&key) {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", lineno + 1, e.message())))?;
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides, as given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?}: expected key=value")))?;
            self.set(canonical(k.trim()), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match canonical(key) {
            "n" => self.n = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "strategy" => self.strategy = parse(key, v)?,
            "hybrid_random_count" => self.hybrid_random_count = parse_opt(key, v)?,
            "subdatabases" => self.subdatabases = parse(key, v)?,
            "subdatabase_policy" => {
                self.subdatabase_policy = match v {
                    "uniform" => SubdatabasePolicy::Uniform,
                    "fixed" => SubdatabasePolicy::Fixed,
                    _ => return Err(CliError::Config(format!("{key}: expected uniform or fixed, got {v:?}"))),
                }
            }
            "subdatabase_index" => self.subdatabase_index = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "tau_intersect" => self.tau_intersect = parse(key, v)?,
            "ratio" => self.ratio = parse_opt(key, v)?,
            "k" => self.k = parse(key, v)?,
            "oracle_ks" => self.oracle_ks = parse_list(key, v)?,
            "clusters" => self.clusters = parse(key, v)?,
            "corpus_sigma" => self.corpus_sigma = parse(key, v)?,
            "corpus_size" => self.corpus_size = parse(key, v)?,
            "codebook_size" => self.codebook_size = parse(key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, v)?,
            "label_classes" => self.label_classes = parse_opt(key, v)?,
            "attribute_shift" => self.attribute_shift = parse(key, v)?,
            "per_image" => self.per_image = parse(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "bench_reps" => self.bench_reps = parse(key, v)?,
            "bench_ms" => self.bench_ms = parse_list(key, v)?,
            "attack_strategies" => self.attack_strategies = parse_list(key, v)?,
            "attack_ms" => self.attack_ms = parse_list(key, v)?,
            "attack_targets" => self.attack_targets = parse(key, v)?,
            "output" => self.output = parse_opt(key, v)?,
            other => return Err(CliError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks that do not need any input file.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.m == 0 || self.m >= self.n {
            return bad(format!("m = {} must satisfy 1 <= m < n = {}", self.m, self.n));
        }
        if self.subdatabases == 0 {
            return bad("subdatabases must be positive".into());
        }
        if !(self.tau_intersect >= 0.0 && self.tau_intersect.is_finite()) {
            return bad("tau_intersect must be a nonnegative number".into());
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("ratio {r} outside (0, 1]"));
            }
        }
        if self.k == 0 || self.oracle_ks.contains(&0) {
            return bad("neighbour counts must be positive".into());
        }
        for (name, x) in [
            ("corpus_sigma", self.corpus_sigma),
            ("noise_sigma", self.noise_sigma),
            ("attribute_shift", self.attribute_shift),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        if self.label_classes == Some(0) {
            return bad("label_classes must be positive or none".into());
        }
        Ok(())
    }

    /// Checks a list of subspace dimensions against `n`.
    pub fn check_ms(&self, key: &str, ms: &[usize]) -> CliResult<()> {
        if ms.iter().any(|&m| m == 0 || m >= self.n) {
            return Err(CliError::Config(format!("{key}: every m must satisfy 1 <= m < n = {}", self.n)));
        }
        Ok(())
    }

    /// The synthetic world this configuration describes.
    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            n: self.n,
            clusters: self.clusters,
            corpus_sigma: self.corpus_sigma,
            corpus_size: self.corpus_size,
            codebook_size: self.codebook_size,
            subdatabases: self.subdatabases,
            kmeans_iters: self.kmeans_iters,
            label_classes: self.label_classes,
            attribute_shift: self.attribute_shift,
            seed: self.seed,
        }
    }

    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in KEYS.iter().filter(|k| !matches!(**k, "S" | "K")) {
            let s = match &v[*key] {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a
                    .iter()
                    .map(|x| x.as_str().map_or_else(|| x.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(", "),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {s}\n"));
        }
        out
    }
}

fn canonical(key: &str) -> &str {
    match key {
        "S" => "subdatabases",
        "K" => "k",
        k => k,
    }
}

impl CliError {
    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Data(m) => m.clone(),
            other => other.to_string(),
        }
    }
}
