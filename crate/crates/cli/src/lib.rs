//! Experiment runner for the `kbb` command: configuration parsing, run
//! persistence, sample-complexity tables, SVG error plots and spectral
//! diagnostics.

pub mod compare;
pub mod config;
pub mod error;
pub mod plot;
pub mod run;
pub mod spectra;

pub use config::{ConfigError, EnvSpec, EvalSpec, ExperimentConfig};
pub use error::CliError;

pub const OUT_DIR_ENV: &str = "KBB_OUT_DIR";
pub const THREADS_ENV: &str = "KBB_THREADS";

/// Thread count from `KBB_THREADS`; unset or empty means every core.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}
