//! One training run: data, split, model, the regime's stages and the run
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rnc_core::data::{split, write_atomic};
use rnc_core::model::{init_model, save_checkpoint};
use rnc_core::training::{band_mae, train_joint_l1, train_two_stage, RunLog};

use crate::config::{ExperimentConfig, Regime};
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "model.json";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub log: RunLog,
    pub metrics: BTreeMap<String, f64>,
}

/// Trains `regime` with `seed` and writes the run into `dir`: the resolved
/// config, the loss curves, `metrics.json` and the model checkpoint.
pub fn run_experiment(cfg: &ExperimentConfig, regime: Regime, seed: u64, dir: &Path) -> Result<RunOutput> {
    let ds = cfg.load_dataset(seed)?;
    let split_spec = cfg.split.resolve(&ds, seed)?;
    let (train, val) = split(&ds, &split_spec)?;
    if val.is_empty() {
        return Err(CliError::Config(format!("split of {} rows leaves no validation rows", ds.len())));
    }

    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let resolved = cfg.resolved(regime, seed, &split_spec, &cfg.out_root());
    write_atomic(&dir.join(CONFIG_FILE), resolved.to_toml()?.as_bytes())?;

    let (mut encoder, mut predictor) = init_model(&cfg.model.spec(ds.dim()), seed)?;
    let stages = cfg.stages(regime, seed);
    let mut log = match regime {
        Regime::L1 => train_joint_l1(&mut encoder, &mut predictor, &train, &val, &stages[0])?,
        Regime::RncL1 | Regime::SupconL1 => {
            let augment = cfg.augment_spec(seed);
            train_two_stage(
                &mut encoder,
                &mut predictor,
                &train,
                &val,
                &stages[0],
                &stages[1],
                Some(&augment),
            )?
        }
    };
    if let Some((lo, hi)) = split_spec.band() {
        let (inside, outside) = band_mae(&encoder, &predictor, &val, lo, hi)?;
        log.metrics.val_mae_inband = inside;
        log.metrics.val_mae_outband = outside;
    }

    log.write_artifacts(dir)?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &encoder, &predictor)?;
    let metrics = log.metrics.to_map();
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        log,
        metrics,
    })
}
