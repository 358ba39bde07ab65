//! Experiment configuration files.
//!
//! A config is a TOML document. Every section except `[dataset]` is optional
//! and falls back to the defaults below; run seeds drive the data split, the
//! model initialization, shuffling and augmentation of each run.
//!
//! ```toml
//! name = "synthetic-demo"
//! regimes = ["l1", "rnc+l1"]
//! seeds = [0, 1, 2]
//!
//! [dataset]
//! kind = "synthetic"
//! n = 512
//! dim = 16
//! noise = 0.05
//!
//! [split]
//! kind = "holdout_band"
//! val_fraction = 0.2
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rnc_core::data::{default_band, generate_synthetic, load_csv, AugmentSpec, Dataset, SplitSpec};
use rnc_core::losses::{RncConfig, SupConBinConfig};
use rnc_core::model::{Activation, MlpSpec};
use rnc_core::training::{LossSpec, OptimizerSpec, StageConfig, PREDICTOR_STAGE_LR};

use crate::error::{CliError, Result};

/// Environment variable that overrides the output root of every command.
pub const OUT_ENV: &str = "RNC_LAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "rnc+l1")]
    RncL1,
    #[serde(rename = "supcon+l1")]
    SupconL1,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::L1, Regime::RncL1, Regime::SupconL1];

    /// File-name friendly form.
    pub fn slug(&self) -> &'static str {
        match self {
            Regime::L1 => "l1",
            Regime::RncL1 => "rnc-l1",
            Regime::SupconL1 => "supcon-l1",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::L1 => "l1",
            Regime::RncL1 => "rnc+l1",
            Regime::SupconL1 => "supcon+l1",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string() == s || r.slug() == s)
            .ok_or_else(|| format!("unknown regime `{s}` (expected l1, rnc+l1 or supcon+l1)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        /// Data seed; the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_n() -> usize {
    512
}
fn default_dim() -> usize {
    16
}
fn default_noise() -> f64 {
    0.05
}
fn default_label_column() -> String {
    "y".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitConfig {
    Random {
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    /// Labels in `[lo, hi]` are kept out of training. The band defaults to
    /// the middle 20% of the label range.
    HoldoutBand {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

fn default_fraction() -> f64 {
    0.8
}
fn default_val_fraction() -> f64 {
    0.2
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Random {
            fraction: default_fraction(),
        }
    }
}

impl SplitConfig {
    pub fn is_holdout(&self) -> bool {
        matches!(self, SplitConfig::HoldoutBand { .. })
    }

    /// The core split for one run. A missing band edge comes from the default
    /// band of `ds`.
    pub fn resolve(&self, ds: &Dataset, seed: u64) -> Result<SplitSpec> {
        Ok(match *self {
            SplitConfig::Random { fraction } => SplitSpec::Random { fraction, seed },
            SplitConfig::HoldoutBand { lo, hi, val_fraction } => {
                let (dlo, dhi) = default_band(ds)
                    .ok_or_else(|| CliError::Config("holdout split of an empty dataset".into()))?;
                SplitSpec::HoldoutBand {
                    lo: lo.unwrap_or(dlo),
                    hi: hi.unwrap_or(dhi),
                    val_fraction,
                    seed,
                }
            }
        })
    }
}

/// Encoder layout. The input width comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            embed_dim: 16,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize) -> MlpSpec {
        let mut layers = vec![input_dim];
        layers.extend(&self.hidden);
        layers.push(self.embed_dim);
        MlpSpec {
            layers,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub gaussian_sigma: f64,
    pub feature_dropout_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let d = AugmentSpec::default();
        AugmentConfig {
            gaussian_sigma: d.gaussian_sigma,
            feature_dropout_p: d.feature_dropout_p,
        }
    }
}

/// Stage 1 of the two-stage regimes. `rnc` and `supcon` hold the settings of
/// the respective loss; the regime picks one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderStageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub rnc: RncConfig,
    pub supcon: SupConBinConfig,
}

impl Default for EncoderStageConfig {
    fn default() -> Self {
        EncoderStageConfig {
            epochs: 200,
            batch_size: 32,
            optimizer: OptimizerSpec::default(),
            rnc: RncConfig::default(),
            supcon: SupConBinConfig::default(),
        }
    }
}

/// An L1 stage: the predictor stage or the joint stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
}

fn predictor_stage_default() -> L1StageConfig {
    L1StageConfig {
        epochs: 100,
        batch_size: 32,
        optimizer: OptimizerSpec::SgdMomentum {
            lr: PREDICTOR_STAGE_LR,
            momentum: 0.9,
        },
    }
}

fn joint_stage_default() -> L1StageConfig {
    L1StageConfig {
        epochs: 200,
        batch_size: 32,
        optimizer: OptimizerSpec::default(),
    }
}

/// Partial L1 stage tables: missing keys take the stage's own defaults, which
/// differ between the predictor and the joint stage.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialL1Stage {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<OptimizerSpec>,
}

impl PartialL1Stage {
    fn or(self, d: L1StageConfig) -> L1StageConfig {
        L1StageConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
        }
    }
}

fn predictor_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<L1StageConfig, D::Error> {
    Ok(PartialL1Stage::deserialize(d)?.or(predictor_stage_default()))
}

fn joint_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<L1StageConfig, D::Error> {
    Ok(PartialL1Stage::deserialize(d)?.or(joint_stage_default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output root; `RNC_LAB_OUT` takes precedence.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub encoder_stage: EncoderStageConfig,
    #[serde(default = "predictor_stage_default", deserialize_with = "predictor_stage")]
    pub predictor_stage: L1StageConfig,
    #[serde(default = "joint_stage_default", deserialize_with = "joint_stage")]
    pub joint_stage: L1StageConfig,
}

fn as_config(e: rnc_core::Error) -> CliError {
    match e {
        rnc_core::Error::Config(m) | rnc_core::Error::Argument(m) => CliError::Config(m),
        other => CliError::Core(other),
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUT_DIR)
}

impl ExperimentConfig {
    /// Parses and validates `path`. A relative CSV path is taken relative to
    /// the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let DatasetSource::Csv { path: csv, .. } = &mut cfg.dataset {
            if csv.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new(""));
                *csv = base.join(&*csv);
            }
            if !csv.is_file() {
                return Err(CliError::Config(format!(
                    "dataset file {} does not exist",
                    csv.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name `{}` is not usable as a directory name", self.name));
        }
        if self.regimes.is_empty() {
            return bad("regimes must list at least one regime".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if self.regimes[..i].contains(r) {
                return bad(format!("regime `{r}` is listed twice"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} is listed twice"));
            }
        }
        if let DatasetSource::Synthetic { n, dim, noise, .. } = self.dataset {
            if n < 2 || dim < 4 || !(noise >= 0.0 && noise.is_finite()) {
                return bad(format!(
                    "synthetic dataset needs n >= 2, dim >= 4 and noise >= 0, got n={n} dim={dim} noise={noise}"
                ));
            }
        }
        match self.split {
            SplitConfig::Random { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                return bad(format!("split fraction must be in (0, 1), got {fraction}"));
            }
            SplitConfig::HoldoutBand { lo, hi, val_fraction } => {
                if !(val_fraction > 0.0 && val_fraction < 1.0) {
                    return bad(format!("holdout val_fraction must be in (0, 1), got {val_fraction}"));
                }
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if !(lo < hi) {
                        return bad(format!("holdout band needs lo < hi, got [{lo}, {hi}]"));
                    }
                }
            }
            _ => {}
        }
        if self.model.embed_dim == 0 || self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return bad("model needs at least one hidden layer and nonzero layer sizes".into());
        }
        self.augment_spec(0).validate().map_err(as_config)?;
        for (stage, epochs, batch) in [
            ("encoder_stage", self.encoder_stage.epochs, self.encoder_stage.batch_size),
            ("predictor_stage", self.predictor_stage.epochs, self.predictor_stage.batch_size),
            ("joint_stage", self.joint_stage.epochs, self.joint_stage.batch_size),
        ] {
            if epochs == 0 || batch < 2 {
                return bad(format!("{stage} needs epochs >= 1 and batch_size >= 2"));
            }
        }
        for regime in &self.regimes {
            for stage in self.stages(*regime, 0) {
                stage.loss.validate().map_err(as_config)?;
                stage.optimizer.validate().map_err(as_config)?;
            }
        }
        Ok(())
    }

    /// The output root: `RNC_LAB_OUT` if set, `out_dir` otherwise.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.clone(),
        }
    }

    pub fn run_name(&self, regime: Regime, seed: u64) -> String {
        format!("{}-{}-seed{seed}", self.name, regime.slug())
    }

    pub fn load_dataset(&self, seed: u64) -> Result<Dataset> {
        Ok(match &self.dataset {
            DatasetSource::Synthetic { n, dim, noise, seed: data_seed } => {
                generate_synthetic(*n, *dim, *noise, data_seed.unwrap_or(seed))?
            }
            DatasetSource::Csv { path, label_column } => load_csv(path, label_column)?,
        })
    }

    pub fn augment_spec(&self, seed: u64) -> AugmentSpec {
        AugmentSpec {
            gaussian_sigma: self.augment.gaussian_sigma,
            feature_dropout_p: self.augment.feature_dropout_p,
            seed,
        }
    }

    /// Stage configs of one run in training order.
    pub fn stages(&self, regime: Regime, seed: u64) -> Vec<StageConfig> {
        let l1 = |s: &L1StageConfig| StageConfig {
            epochs: s.epochs,
            batch_size: s.batch_size,
            loss: LossSpec::L1,
            optimizer: s.optimizer,
            seed,
        };
        let encoder = |loss| StageConfig {
            epochs: self.encoder_stage.epochs,
            batch_size: self.encoder_stage.batch_size,
            loss,
            optimizer: self.encoder_stage.optimizer,
            seed,
        };
        match regime {
            Regime::L1 => vec![l1(&self.joint_stage)],
            Regime::RncL1 => vec![
                encoder(LossSpec::Rnc(self.encoder_stage.rnc)),
                l1(&self.predictor_stage),
            ],
            Regime::SupconL1 => vec![
                encoder(LossSpec::SupconBinned(self.encoder_stage.supcon)),
                l1(&self.predictor_stage),
            ],
        }
    }

    /// This config narrowed to one run, with data-dependent defaults filled in
    /// so the copy alone reproduces the run.
    pub fn resolved(&self, regime: Regime, seed: u64, split: &SplitSpec, out_root: &Path) -> Self {
        let mut cfg = self.clone();
        cfg.regimes = vec![regime];
        cfg.seeds = vec![seed];
        cfg.out_dir = out_root.to_path_buf();
        if let DatasetSource::Synthetic { seed: s, .. } = &mut cfg.dataset {
            s.get_or_insert(seed);
        }
        if let (SplitConfig::HoldoutBand { lo, hi, .. }, SplitSpec::HoldoutBand { lo: l, hi: h, .. }) =
            (&mut cfg.split, split)
        {
            *lo = Some(*l);
            *hi = Some(*h);
        }
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}
