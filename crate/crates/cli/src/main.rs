//! `das`: command-line runner for the alignment experiments.

mod artifacts;
mod config;
mod suites;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::artifacts::{create_run_dir, samples_csv, scatter_svg};
use crate::config::{Config, ConfigError, Overrides};

#[derive(Parser)]
#[command(name = "das", version, about = "Reward-aligned sampling experiments for diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named suite and write its artifacts
    Run {
        /// Suite name; may instead come from `suite` in the config file
        suite: Option<String>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// List the available suites
    ListSuites,
    /// Train the score network (the train-score suite)
    TrainScore {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Online black-box optimization (the online suite)
    Online {
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args, Default)]
struct RunOpts {
    /// TOML or JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Parent of the run directory; DAS_OUT_DIR takes precedence
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved config and stop
    #[arg(long)]
    dry_run: bool,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListSuites => {
            list_suites();
            Ok(())
        }
        Command::Run { suite, opts } => run(suite.as_deref(), &opts),
        Command::TrainScore { opts } => run(Some("train-score"), &opts),
        Command::Online { opts } => run(Some("online"), &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn list_suites() {
    for s in suites::registry() {
        println!("{:<18} ~{:<6} {}", s.name, s.runtime, s.about);
    }
}

fn run(suite: Option<&str>, opts: &RunOpts) -> Result<(), Failure> {
    let file = opts.config.as_deref().map(config::read_file).transpose()?;
    let flags = Overrides {
        seed: opts.seed,
        particles: opts.particles,
        alpha: opts.alpha,
        gamma: opts.gamma,
        workers: opts.workers,
    };
    let cfg = Config::assemble(suite, file.as_ref(), |name| suites::find(name).map(|s| (s.defaults)()), &flags)?;
    let resolved = cfg.resolve()?;
    let echo = cfg.to_toml();
    print!("{echo}");
    if opts.dry_run {
        return Ok(());
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("starting the worker pool")?;
    }
    let suite = suites::find(&cfg.suite).expect("validated above");
    let root = std::env::var_os("DAS_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| opts.out.clone());

    let start = Instant::now();
    eprintln!("running {} (seed {})", suite.name, cfg.seed);
    let out = (suite.run)(&cfg, &resolved).with_context(|| format!("suite {}", suite.name))?;
    let elapsed = start.elapsed().as_secs_f64();

    let dir = create_run_dir(&root, suite.name, cfg.seed).with_context(|| format!("creating a run directory in {}", root.display()))?;
    let mut metrics = serde_json::Map::new();
    metrics.insert("suite".into(), json!(suite.name));
    metrics.insert("seed".into(), json!(cfg.seed));
    metrics.insert("elapsed_s".into(), json!(elapsed));
    metrics.extend(out.metrics);
    let mut files = vec![
        ("config.toml".to_string(), echo),
        ("samples.csv".to_string(), samples_csv(&out.panels)),
        ("metrics.json".to_string(), serde_json::to_string_pretty(&Value::Object(metrics.clone())).context("metrics")? + "\n"),
        ("trace.csv".to_string(), out.trace_csv),
        ("scatter.svg".to_string(), scatter_svg(&out.panels, out.axes, out.frame)),
    ];
    files.extend(out.extras);
    for (name, body) in &files {
        write(&dir, name, body)?;
    }
    summarize(&metrics);
    println!("artifacts: {}", dir.display());
    eprintln!("done in {elapsed:.1}s");
    Ok(())
}

fn write(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn summarize(metrics: &serde_json::Map<String, Value>) {
    let Some(Value::Array(methods)) = metrics.get("methods") else { return };
    println!("{:<18} {:>10} {:>12}", "method", "emd", "mean_reward");
    for m in methods {
        let num = |k: &str| m.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
        println!("{:<18} {:>10.4} {:>12.4}", m.get("method").and_then(Value::as_str).unwrap_or("?"), num("emd"), num("mean_reward"));
    }
}
