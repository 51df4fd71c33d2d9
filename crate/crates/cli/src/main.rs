use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kbb_cli::compare::{compare, load_compatible};
use kbb_cli::run::{config_from_manifest, run_experiment};
use kbb_cli::{plot, spectra, threads_from_env, CliError, ExperimentConfig, OUT_DIR_ENV};
use kbb_core::diagnostics::{rate_csv, spectra_csv};

#[derive(Parser)]
#[command(
    name = "kbb",
    version,
    about = "Policy evaluation experiments: VI, FVI and Krylov-Bellman boosting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a config file or a manifest.json.
    Run {
        config: PathBuf,
        /// Output directory; overrides KBB_OUT_DIR and the config's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sample-complexity table over finished run directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-error curves of finished run directories as SVG.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restricted spectral values along Krylov subspaces (reversible tabular envs).
    Spectra {
        config: PathBuf,
        #[arg(long)]
        depth: usize,
        /// Emit observed error ratios of noise-free boosting against their
        /// bounds instead, for up to `depth` iterations.
        #[arg(long)]
        rate: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        config_from_manifest(path)
    } else {
        ExperimentConfig::from_file(path)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(CliError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out_dir } => {
            let config = load_config(&config)?;
            let dir = out_dir
                .or_else(|| {
                    std::env::var_os(OUT_DIR_ENV)
                        .filter(|v| !v.is_empty())
                        .map(PathBuf::from)
                })
                .unwrap_or_else(|| config.out_dir.clone());
            let summary = run_experiment(&config, &dir, threads_from_env()?)?;
            println!("{}: {}", config.env.id(), summary.dir.display());
            for (algo, seed, rec) in &summary.records {
                println!(
                    "  {algo:<3} seed {seed:<4} initial {:.4e}  final {:.4e}  samples {}",
                    rec.initial_error,
                    rec.final_error().unwrap_or(f64::NAN),
                    rec.rows.last().map_or(0, |r| r.cum_samples)
                );
            }
            Ok(())
        }
        Command::Compare { dirs, out } => {
            let report = compare(&load_compatible(&dirs)?);
            print!("{}", report.to_markdown());
            if let Some(path) = out {
                std::fs::write(path, report.to_csv())?;
            }
            Ok(())
        }
        Command::Plot { dirs, out } => {
            let svg = plot::plot(&load_compatible(&dirs)?)?;
            std::fs::write(out, svg)?;
            Ok(())
        }
        Command::Spectra {
            config,
            depth,
            rate,
            out,
        } => {
            let config = load_config(&config)?;
            let text = if rate {
                rate_csv(&spectra::rates(&config, depth)?)
            } else {
                spectra_csv(&spectra::spectra(&config, depth)?)
            };
            emit(out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kbb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
