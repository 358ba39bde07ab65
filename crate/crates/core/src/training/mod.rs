//! Training loops, the two training regimes and evaluation.
//!
//! A run is either joint L1 (encoder and head fitted end to end) or two-stage:
//! the encoder is fitted with a representation loss, frozen, and a linear head
//! is fitted on its embeddings with L1. Everything is single-threaded and
//! seeded, so a configuration reproduces its [`RunLog`] bit for bit apart from
//! the wall-clock fields.

mod gradcheck;
mod metrics;
mod optimizer;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gradcheck::{
    gradcheck_loss, gradcheck_losses, CheckedLoss, LossGradCheck, GRADCHECK_DEFAULT_TOL, GRADCHECK_H,
    GRADCHECK_ROWS, GRADCHECK_SUPCON_BIN,
};
pub use metrics::{
    average_ranks, band_mae, embedding_spearman, evaluate, mae, predict, rmse, spearman,
    EvalMetrics, SPEARMAN_MAX_POINTS,
};
pub use optimizer::{Optimizer, OptimizerSpec};

use crate::data::{format_f64, two_views, write_atomic, AugmentSpec, Dataset};
use crate::error::{Error, Result};
use crate::losses::{l1_loss, rnc_loss, supcon_binned_loss, Batch, RncConfig, SupConBinConfig};
use crate::model::{LinearPredictor, MlpEncoder, Standardizer};
use crate::numerics::{Graph, Matrix, ParameterSet, Var};
use crate::rng::{self, stream};

/// Default learning rate of the predictor stage of the two-stage regime. Its
/// inputs are standardized embeddings, which are much larger than the hidden
/// activations a jointly trained head sees, so the generic default is too big.
pub const PREDICTOR_STAGE_LR: f64 = 0.005;

/// Losses above this are treated as a diverged run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Most training rows the final encoder loss looks at; bigger training sets
/// are subsampled.
pub const FINAL_LOSS_MAX_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Rnc(RncConfig),
    SupconBinned(SupConBinConfig),
    L1,
}

impl LossSpec {
    pub fn is_representation(&self) -> bool {
        !matches!(self, LossSpec::L1)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Rnc(cfg) => cfg.validate(),
            LossSpec::SupconBinned(cfg) => cfg.validate(),
            LossSpec::L1 => Ok(()),
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    fn name(&self) -> &'static str {
        match self {
            LossSpec::Rnc(_) => "rnc",
            LossSpec::SupconBinned(_) => "supcon",
            LossSpec::L1 => "l1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
}

impl StageConfig {
    pub fn new(epochs: usize, batch_size: usize, loss: LossSpec, seed: u64) -> Self {
        StageConfig {
            epochs,
            batch_size,
            loss,
            optimizer: OptimizerSpec::default(),
            seed,
        }
    }

    /// Checks the config against a training set of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 || self.batch_size > n {
            return Err(Error::Config(format!(
                "batch_size must be in [2, {n}] for {n} training rows, got {}",
                self.batch_size
            )));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub records: Vec<EpochRecord>,
}

impl StageLog {
    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_loss.map(|v| (r.epoch, v)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub val_mae: f64,
    pub val_rmse: f64,
    pub embedding_spearman: f64,
    /// Stage-1 loss on clean training rows at the training batch size.
    pub final_encoder_rnc_loss: Option<f64>,
    /// The same loss in one pass over (up to 512) training rows.
    pub final_encoder_rnc_loss_fullset: Option<f64>,
    pub final_encoder_supcon_loss: Option<f64>,
    pub final_encoder_supcon_loss_fullset: Option<f64>,
    pub val_mae_inband: Option<f64>,
    pub val_mae_outband: Option<f64>,
}

impl FinalMetrics {
    /// Flat key to number map; absent optional metrics are left out.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("val_mae".to_string(), self.val_mae);
        m.insert("val_rmse".to_string(), self.val_rmse);
        m.insert("embedding_spearman".to_string(), self.embedding_spearman);
        let optional = [
            ("final_encoder_rnc_loss", self.final_encoder_rnc_loss),
            ("final_encoder_rnc_loss_fullset", self.final_encoder_rnc_loss_fullset),
            ("final_encoder_supcon_loss", self.final_encoder_supcon_loss),
            ("final_encoder_supcon_loss_fullset", self.final_encoder_supcon_loss_fullset),
            ("val_mae_inband", self.val_mae_inband),
            ("val_mae_outband", self.val_mae_outband),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub stages: Vec<StageLog>,
    pub metrics: FinalMetrics,
}

impl RunLog {
    /// The stage whose curves go to `train_loss.csv` / `val_loss.csv`.
    pub fn final_stage(&self) -> Option<&StageLog> {
        self.stages.last()
    }

    /// Writes `train_loss.csv`, `val_loss.csv`, `metrics.json` and, for
    /// two-stage runs, `encoder_loss.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let last = self
            .final_stage()
            .ok_or_else(|| Error::arg("run log has no stages"))?;
        let train: Vec<(usize, f64)> = last.records.iter().map(|r| (r.epoch, r.train_loss)).collect();
        write_atomic(&dir.join("train_loss.csv"), loss_csv(&train).as_bytes())?;
        write_atomic(&dir.join("val_loss.csv"), loss_csv(&last.val_losses()).as_bytes())?;
        if self.stages.len() > 1 {
            let enc: Vec<(usize, f64)> = self.stages[0]
                .records
                .iter()
                .map(|r| (r.epoch, r.train_loss))
                .collect();
            write_atomic(&dir.join("encoder_loss.csv"), loss_csv(&enc).as_bytes())?;
        }
        let json = serde_json::to_string_pretty(&self.metrics.to_map())
            .map_err(|e| Error::arg(e.to_string()))?;
        write_atomic(&dir.join("metrics.json"), format!("{json}\n").as_bytes())
    }
}

fn loss_csv(points: &[(usize, f64)]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (epoch, loss) in points {
        s.push_str(&format!("{epoch},{}\n", format_f64(*loss)));
    }
    s
}

/// What a stage optimizes. A frozen encoder is only borrowed, so it cannot be
/// changed by the stage.
pub enum StageTarget<'a> {
    Encoder(&'a mut MlpEncoder),
    Joint(&'a mut MlpEncoder, &'a mut LinearPredictor),
    Predictor {
        frozen: &'a MlpEncoder,
        predictor: &'a mut LinearPredictor,
    },
}

/// Runs one stage. Each epoch shuffles the training rows with the stage seed,
/// cuts them into full batches (a trailing partial batch is dropped) and takes
/// one optimizer step per batch.
///
/// Representation losses see two augmented views of every row, so their
/// batches hold `2 * batch_size` rows; without `augment` both views are the
/// clean rows. L1 stages train on clean rows and record the validation MAE of
/// every epoch when `val` is given.
pub fn train_stage(
    name: &str,
    mut target: StageTarget<'_>,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &StageConfig,
    augment: Option<&AugmentSpec>,
) -> Result<StageLog> {
    cfg.validate(train.len())?;
    let clean = AugmentSpec {
        gaussian_sigma: 0.0,
        feature_dropout_p: 0.0,
        seed: 0,
    };
    let augment = augment.unwrap_or(&clean);
    augment.validate().map_err(|e| Error::Config(e.to_string()))?;
    match (&target, cfg.loss.is_representation()) {
        (StageTarget::Encoder(_), true) | (StageTarget::Joint(..), false) => {}
        (StageTarget::Predictor { .. }, false) => {}
        _ => {
            return Err(Error::Config(format!(
                "loss `{}` cannot train this stage's parameters",
                cfg.loss.name()
            )))
        }
    }

    // With a frozen encoder the embeddings never change; compute them once.
    let (train_x, val_x) = match &target {
        StageTarget::Predictor { frozen, .. } => (
            frozen.embed(&train.features)?,
            val.map(|v| frozen.embed(&v.features)).transpose()?,
        ),
        _ => (train.features.clone(), val.map(|v| v.features.clone())),
    };

    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut shuffle = rng::seeded(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let n_batches = train.len() / cfg.batch_size;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, idx) in order.chunks_exact(cfg.batch_size).enumerate() {
            let x = train_x.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let loss = match &target {
                StageTarget::Encoder(enc) => {
                    let (views, source) = two_views(&x, augment, step)?;
                    let labels = source.iter().map(|&i| y[i]).collect();
                    let xv = g.constant(views);
                    let z = enc.encode(&mut g, xv)?;
                    representation_loss(&mut g, z, labels, &cfg.loss)?
                }
                StageTarget::Joint(enc, head) => {
                    let xv = g.constant(x);
                    let z = enc.encode(&mut g, xv)?;
                    let p = head.predict(&mut g, z)?;
                    l1_loss(&mut g, p, &y)?
                }
                StageTarget::Predictor { predictor, .. } => {
                    let zv = g.constant(x);
                    let p = predictor.predict(&mut g, zv)?;
                    l1_loss(&mut g, p, &y)?
                }
            };
            let value = g.value(loss).data()[0];
            if !value.is_finite() || value > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged {
                    stage: name.to_string(),
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            total += value;
            let grads = g.backward(loss)?;
            for params in trainable(&mut target) {
                params.zero_grad();
                grads.accumulate_into(params);
                opt.step(params);
            }
            step += 1;
        }
        for params in trainable(&mut target) {
            params.zero_grad();
        }

        let val_loss = match (&target, &val, &val_x) {
            (StageTarget::Joint(_, head), Some(v), Some(vx)) => {
                Some(mae(&head.predict_matrix(&head_input(&target, vx)?)?, &v.labels))
            }
            (StageTarget::Predictor { predictor, .. }, Some(v), Some(vx)) => {
                Some(mae(&predictor.predict_matrix(vx)?, &v.labels))
            }
            _ => None,
        };
        records.push(EpochRecord {
            epoch,
            train_loss: total / n_batches as f64,
            val_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(StageLog {
        name: name.to_string(),
        records,
    })
}

fn head_input(target: &StageTarget<'_>, x: &Matrix) -> Result<Matrix> {
    match target {
        StageTarget::Joint(enc, _) => enc.embed(x),
        _ => Ok(x.clone()),
    }
}

fn trainable<'s>(target: &'s mut StageTarget<'_>) -> Vec<&'s mut ParameterSet> {
    match target {
        StageTarget::Encoder(enc) => vec![enc.params_mut()],
        StageTarget::Joint(enc, head) => vec![enc.params_mut(), head.params_mut()],
        StageTarget::Predictor { predictor, .. } => vec![predictor.params_mut()],
    }
}

fn representation_loss(g: &mut Graph, z: Var, labels: Vec<f64>, loss: &LossSpec) -> Result<Var> {
    let batch = Batch::new(g, z, labels)?;
    match loss {
        LossSpec::Rnc(cfg) => rnc_loss(g, &batch, cfg),
        LossSpec::SupconBinned(cfg) => supcon_binned_loss(g, &batch, cfg),
        LossSpec::L1 => Err(Error::Config("l1 is not a representation loss".into())),
    }
}

/// Representation loss of the clean (unaugmented) rows of `ds`, evaluated in
/// one pass over at most [`FINAL_LOSS_MAX_SAMPLES`] rows (seeded subsample).
///
/// The RNC loss grows with the number of rows it is evaluated on, so values
/// from datasets of different sizes are not comparable; see
/// [`encoder_loss_chunked`] for that.
pub fn encoder_loss(encoder: &MlpEncoder, ds: &Dataset, loss: &LossSpec, seed: u64) -> Result<f64> {
    let idx = loss_rows(ds, seed);
    chunk_loss(encoder, ds, &idx, loss)
}

/// Mean representation loss over `FINAL_LOSS_MAX_SAMPLES / chunk` random
/// `chunk`-row pieces of the training rows. Pieces are cut from successive
/// seeded shuffles, so every dataset size gets the same number of pieces and
/// rows are used evenly. With `chunk` equal to the training batch
/// (`2 * batch_size` views) this is the loss at the size the encoder was
/// trained at, independent of the dataset size. A dataset smaller than one
/// piece is evaluated in one pass.
pub fn encoder_loss_chunked(
    encoder: &MlpEncoder,
    ds: &Dataset,
    loss: &LossSpec,
    chunk: usize,
    seed: u64,
) -> Result<f64> {
    if chunk < 2 {
        return Err(Error::arg(format!("chunk must be >= 2, got {chunk}")));
    }
    if ds.len() <= chunk {
        let all: Vec<usize> = (0..ds.len()).collect();
        return chunk_loss(encoder, ds, &all, loss);
    }
    let pieces = (FINAL_LOSS_MAX_SAMPLES / chunk).max(1);
    let mut rng = rng::seeded(seed, stream::LOSS_SUBSAMPLE);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    let mut count = 0;
    while count < pieces {
        order.shuffle(&mut rng);
        for piece in order.chunks_exact(chunk).take(pieces - count) {
            total += chunk_loss(encoder, ds, piece, loss)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn loss_rows(ds: &Dataset, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::seeded(seed, stream::LOSS_SUBSAMPLE));
    idx.truncate(FINAL_LOSS_MAX_SAMPLES);
    idx
}

fn chunk_loss(encoder: &MlpEncoder, ds: &Dataset, idx: &[usize], loss: &LossSpec) -> Result<f64> {
    let z = encoder.embed(&ds.features.select_rows(idx))?;
    let labels = idx.iter().map(|&i| ds.labels[i]).collect();
    let mut g = Graph::new();
    let zv = g.constant(z);
    let l = representation_loss(&mut g, zv, labels, loss)?;
    Ok(g.value(l).data()[0])
}

/// Two-stage regime: `stage1` fits the encoder with its representation loss,
/// then `stage2` fits the predictor with L1 on the frozen embeddings.
pub fn train_two_stage(
    encoder: &mut MlpEncoder,
    predictor: &mut LinearPredictor,
    train: &Dataset,
    val: &Dataset,
    stage1: &StageConfig,
    stage2: &StageConfig,
    augment: Option<&AugmentSpec>,
) -> Result<RunLog> {
    stage1.validate(train.len())?;
    stage2.validate(train.len())?;
    if !stage1.loss.is_representation() {
        return Err(Error::Config("stage 1 needs a representation loss".into()));
    }
    if stage2.loss != LossSpec::L1 {
        return Err(Error::Config("stage 2 must use the l1 loss".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }

    let s1 = train_stage("encoder", StageTarget::Encoder(encoder), train, Some(val), stage1, augment)?;
    let final_loss = encoder_loss_chunked(encoder, train, &stage1.loss, 2 * stage1.batch_size, stage1.seed)?;
    let final_loss_fullset = encoder_loss(encoder, train, &stage1.loss, stage1.seed)?;
    let frozen: &MlpEncoder = encoder;
    // The representation loss leaves the embedding scale free, so the head
    // sees standardized embeddings with statistics fixed from the training set.
    predictor.set_input_standardizer(Some(Standardizer::fit(&frozen.embed(&train.features)?)?))?;
    let s2 = train_stage(
        "predictor",
        StageTarget::Predictor { frozen, predictor },
        train,
        Some(val),
        stage2,
        None,
    )?;

    let eval = evaluate(frozen, predictor, val, stage1.seed)?;
    let mut metrics = FinalMetrics {
        val_mae: eval.mae,
        val_rmse: eval.rmse,
        embedding_spearman: eval.spearman,
        ..Default::default()
    };
    match stage1.loss {
        LossSpec::Rnc(_) => {
            metrics.final_encoder_rnc_loss = Some(final_loss);
            metrics.final_encoder_rnc_loss_fullset = Some(final_loss_fullset);
        }
        _ => {
            metrics.final_encoder_supcon_loss = Some(final_loss);
            metrics.final_encoder_supcon_loss_fullset = Some(final_loss_fullset);
        }
    }
    Ok(RunLog {
        stages: vec![s1, s2],
        metrics,
    })
}

/// Joint regime: encoder and predictor trained end to end with L1.
pub fn train_joint_l1(
    encoder: &mut MlpEncoder,
    predictor: &mut LinearPredictor,
    train: &Dataset,
    val: &Dataset,
    cfg: &StageConfig,
) -> Result<RunLog> {
    if cfg.loss != LossSpec::L1 {
        return Err(Error::Config("the joint regime trains with the l1 loss".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let stage = train_stage("joint", StageTarget::Joint(encoder, predictor), train, Some(val), cfg, None)?;
    let eval = evaluate(encoder, predictor, val, cfg.seed)?;
    Ok(RunLog {
        stages: vec![stage],
        metrics: FinalMetrics {
            val_mae: eval.mae,
            val_rmse: eval.rmse,
            embedding_spearman: eval.spearman,
            ..Default::default()
        },
    })
}
