//! Experiment runner for rank-and-contrast regression.
//!
//! The binary `rnc-lab` wraps four commands: `synth` writes a synthetic
//! dataset as CSV, `train` runs one regime with one seed, `compare` sweeps
//! regimes and seeds and summarizes them, and `gradcheck` checks the loss
//! gradients through the MLP. The command functions live here so tests can
//! call them in process.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

use std::path::{Path, PathBuf};

use rnc_core::data::{generate_synthetic, write_csv};
use rnc_core::model::MlpSpec;
use rnc_core::training::{gradcheck_losses, LossGradCheck};

pub use config::{ExperimentConfig, Regime};
pub use error::{exit, CliError, Result};

/// Writes `generate_synthetic(n, dim, noise, seed)` to `out` and returns the
/// number of rows written.
pub fn cmd_synth(n: usize, dim: usize, noise: f64, seed: u64, out: &Path) -> Result<usize> {
    let ds = generate_synthetic(n, dim, noise, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_csv(out, &ds)?;
    Ok(ds.len())
}

/// Trains one run into `<out root>/<run name>/`. Without `regime` or `seed`
/// the first one listed in the config is used.
pub fn cmd_train(cfg: &ExperimentConfig, regime: Option<Regime>, seed: Option<u64>) -> Result<run::RunOutput> {
    let regime = regime.unwrap_or(cfg.regimes[0]);
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let dir = cfg.out_root().join(cfg.run_name(regime, seed));
    run::run_experiment(cfg, regime, seed, &dir)
}

pub fn cmd_compare(cfg: &ExperimentConfig, jobs: usize) -> Result<compare::CompareOutput> {
    compare::compare(cfg, jobs)
}

/// Gradient checks of every loss on the default MLP. Fails if any loss
/// exceeds `tol`.
pub fn cmd_gradcheck(seed: u64, tol: f64) -> Result<Vec<LossGradCheck>> {
    if !(tol > 0.0) {
        return Err(CliError::Config(format!("tolerance must be > 0, got {tol}")));
    }
    let checks = gradcheck_losses(&MlpSpec::default(), seed, tol)?;
    Ok(checks)
}

/// Default CSV path of `synth` when no `--out` is given.
pub fn default_synth_path(n: usize, dim: usize, noise: f64, seed: u64) -> PathBuf {
    let root = match std::env::var_os(config::OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(config::DEFAULT_OUT_DIR),
    };
    root.join(format!("synthetic-n{n}-p{dim}-noise{noise}-seed{seed}.csv"))
}
