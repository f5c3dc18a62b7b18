use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affine_lift_cli::commands::{self, LiftOptions};
use affine_lift_cli::error::EXIT_CONFIG;
use affine_lift_cli::{CliError, CliResult, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affine-lift", version, about = "Conceal descriptors as affine subspaces, match them and attack them")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; unset keys keep their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set m=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or prefix; overrides the `output` key.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cluster a synthetic corpus into a lifting database with sub-database partition.
    BuildDb,
    /// Write a synthetic image pair (`<out>.queries.ppvf`, `<out>.refs.ppvf`).
    Synth,
    /// Lift a descriptor file to one subspace per descriptor.
    Lift {
        descriptors: PathBuf,
        /// Lifting database; required by every strategy but `random`.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Attribute labels of the descriptors (JSON array).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        image_id: u64,
        /// Also write the concealed descriptors and sampled entries to `<out>.SECRETS.json`.
        #[arg(long)]
        test_mode: bool,
    },
    /// Match two files; the distance mode follows from their record kinds.
    Match { queries: PathBuf, refs: PathBuf },
    /// Attack a lifted file (needs its test-mode sidecar), or run the configured grid.
    Attack {
        /// Lifted file; omit together with --campaign.
        subspaces: Option<PathBuf>,
        /// Attack database.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Test-mode sidecar; defaults to `<subspaces>.SECRETS.json`.
        #[arg(long)]
        secrets: Option<PathBuf>,
        /// Run the strategy × m × K grid on the configured synthetic world.
        #[arg(long)]
        campaign: bool,
    },
    /// Time the distance matrix for s2s and p2s at each configured m.
    Bench,
    /// Print the resolved configuration in config-file syntax.
    ShowConfig,
}

fn output(cfg: &RunConfig, common: &Common, default: &str) -> PathBuf {
    common
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.common.overrides)?;
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::BuildDb => {
            let out = output(&cfg, &cli.common, "codebook.ppvf");
            let b = commands::build_db(&cfg, &out)?;
            eprintln!(
                "wrote {} ({} entries in {} sub-databases) and {}",
                show(&b.codebook),
                b.subdatabase_sizes.iter().sum::<usize>(),
                b.subdatabase_sizes.len(),
                show(&b.partition)
            );
        }
        Cmd::Synth => {
            let out = output(&cfg, &cli.common, "pair");
            let s = commands::synth(&cfg, &out)?;
            eprintln!("wrote {} and {}", show(&s.queries), show(&s.refs));
        }
        Cmd::Lift {
            descriptors,
            db,
            labels,
            image_id,
            test_mode,
        } => {
            let out = output(&cfg, &cli.common, "lifted.ppvf");
            let opts = LiftOptions {
                image_id,
                test_mode,
                labels,
            };
            let l = commands::lift(&cfg, &descriptors, db.as_deref(), &out, &opts)?;
            eprintln!("wrote {} subspaces to {}", l.count, show(&l.output));
            if let Some(s) = &l.secrets {
                eprintln!("test mode: concealed data written to {}", show(s));
            }
        }
        Cmd::Match { queries, refs } => {
            let out = output(&cfg, &cli.common, "match");
            let o = commands::match_files(&cfg, &queries, &refs, &out)?;
            let s = &o.summary;
            println!(
                "distance matrix {}x{} ({}, {}): {:.2} ms",
                s.rows,
                s.cols,
                s.mode.as_str(),
                s.representation,
                s.distance_ms
            );
            println!(
                "{} matches, precision {:.4}, recall {:.4}, {} collisions",
                s.report.num_matches, s.report.precision, s.report.recall, s.report.collision_count
            );
            eprintln!("wrote {} and {}", show(&o.report_path), show(&o.csv_path));
        }
        Cmd::Attack {
            subspaces,
            db,
            secrets,
            campaign,
        } => {
            let out = output(&cfg, &cli.common, "attack");
            let o = if campaign {
                commands::attack_grid(&cfg, &out)?
            } else {
                let subspaces = subspaces.ok_or_else(|| CliError::Config("attack needs a lifted file or --campaign".into()))?;
                let db = db.ok_or_else(|| CliError::Config("attack needs --db".into()))?;
                commands::attack(&cfg, &subspaces, secrets.as_deref(), &db, &out)?
            };
            for r in &o.summary.rows {
                println!(
                    "{:<16} m={:<3} K={:<4} mean {:.4}  p50 {:.4}  p90 {:.4}  top1 {:.3}  confusion {:.3}",
                    r.strategy.as_str(),
                    r.m,
                    r.k,
                    r.mean_dist,
                    r.p50_dist,
                    r.p90_dist,
                    r.top1_rate,
                    r.confusion_rate
                );
            }
            if let Some(k) = &o.summary.knn {
                let show = |a: Option<f64>| a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
                println!(
                    "attribute K={}: lifted accuracy {}, raw accuracy {}",
                    k.k,
                    show(k.accuracy),
                    show(k.raw_accuracy)
                );
            }
            eprintln!("wrote {} and {}", show(&o.report_path), show(&o.csv_path));
        }
        Cmd::Bench => {
            let out = output(&cfg, &cli.common, "bench");
            let o = commands::bench(&cfg, &out)?;
            println!("threads: {}", o.summary.threads);
            for c in &o.summary.cells {
                println!(
                    "{} m={:<3} {:>10.2} ± {:<8.2} ms  ({} reps, {})",
                    c.mode.as_str(),
                    c.m,
                    c.mean_ms,
                    c.std_ms,
                    c.reps,
                    c.representation
                );
            }
            eprintln!("wrote {} and {}", show(&o.report_path), show(&o.csv_path));
        }
        Cmd::ShowConfig => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
