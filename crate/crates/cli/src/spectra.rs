//! `kbb spectra`: restricted spectral values along Krylov subspaces of a
//! reversible tabular chain, and the per-iteration rate check of noise-free
//! boosting.

use kbb_core::diagnostics::{check_theorem1_rate, spectra_table, QOperator, RateRow, SpectraRow};
use kbb_core::{KbbError, TabularModel};

use crate::config::ExperimentConfig;
use crate::error::CliError;

fn reversible_model(config: &ExperimentConfig) -> Result<TabularModel, CliError> {
    if !config.env.is_tabular() {
        return Err(CliError::Input(format!(
            "spectra needs a tabular environment, got `{}`",
            config.env.kind()
        )));
    }
    let env = config.env.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(env
        .as_tabular()
        .expect("tabular spec builds a tabular env")
        .model()
        .clone())
}

fn classify(err: KbbError, id: &str) -> CliError {
    match err {
        KbbError::NotReversible => {
            CliError::Input(format!("{id} is not reversible: spectral values need detailed balance"))
        }
        other => CliError::Runtime(other.to_string()),
    }
}

/// Rows `t = 1..=depth`; row `t` uses the Krylov subspace of depth `t - 1`.
pub fn spectra(config: &ExperimentConfig, depth: usize) -> Result<Vec<SpectraRow>, CliError> {
    if depth == 0 {
        return Err(CliError::Input("--depth must be at least 1".into()));
    }
    let model = reversible_model(config)?;
    let qop = QOperator::new(&model).map_err(|e| classify(e, &config.env.id()))?;
    spectra_table(&qop, depth).map_err(|e| classify(e, &config.env.id()))
}

/// Observed `Q`-norm error ratios of noise-free boosting next to their bounds.
pub fn rates(config: &ExperimentConfig, max_iters: usize) -> Result<Vec<RateRow>, CliError> {
    let model = reversible_model(config)?;
    check_theorem1_rate(&model, max_iters).map_err(|e| classify(e, &config.env.id()))
}
