use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subsort_cli::commands::{self, SUMMARY_FILE};
use subsort_cli::config::{InputSource, RunConfig};
use subsort_cli::error::{CliError, Result};
use subsort_cli::evaluate::{evaluate, render_table};

/// Subspace-mixture sorting of single-particle image stacks.
#[derive(Parser)]
#[command(name = "subsort", version)]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sort a stack and write manifest, trace, model and summary.
    Sort {
        #[command(flatten)]
        common: Common,
        /// Initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Rank by the single-subspace energy ratio instead.
        #[arg(long)]
        baseline: bool,
        /// Stop pruning once this many images remain.
        #[arg(long)]
        target_keep: Option<usize>,
    },
    /// Compare manifests against ground-truth labels.
    Evaluate {
        /// Manifest CSV; repeat to compare several.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        /// Labels CSV.
        #[arg(long)]
        labels: PathBuf,
        /// JSON report path; defaults to evaluation.json beside the first manifest.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn report_path(manifests: &[PathBuf]) -> PathBuf {
    manifests[0]
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("evaluation.json")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, seed } => {
            let mut cfg = load(&common)?;
            if let (Some(seed), InputSource::Synthetic(spec)) = (seed, &mut cfg.input) {
                spec.seed = seed;
            }
            let dir = commands::simulate(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Sort {
            common,
            seed,
            baseline,
            target_keep,
        } => {
            let mut cfg = load(&common)?;
            if let Some(seed) = seed {
                cfg.em.seed = seed;
            }
            cfg.baseline |= baseline;
            if target_keep.is_some() {
                cfg.sort.target_keep = target_keep;
            }
            let summary = commands::sort(&cfg, cli.threads)?;
            println!(
                "{}: kept {} of {} ({:.1} s), summary in {}",
                summary.method,
                summary.kept,
                summary.input_count,
                summary.runtime_seconds,
                cfg.output_dir.join(SUMMARY_FILE).display()
            );
        }
        Command::Evaluate {
            manifests,
            labels,
            output,
        } => {
            let eval = evaluate(&manifests, &labels)?;
            print!("{}", render_table(&eval));
            let path = output.unwrap_or_else(|| report_path(&manifests));
            let mut text = serde_json::to_string_pretty(&eval).expect("reports serialize");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SUBSORT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
