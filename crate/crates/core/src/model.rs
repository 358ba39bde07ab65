//! Encoder `f: R^d_in -> R^d_e` (MLP) and predictor `g: R^d_e -> R` (linear).
//!
//! Parameters are named `enc.<layer>.weight`, `enc.<layer>.bias`,
//! `head.weight` and `head.bias`. Weights are stored `fan_in x fan_out` so a
//! layer is `x W + b` on row-major batches.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, ParameterSet, Var};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::arg(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer sizes `[d_in, h_1, ..., d_e]`; hidden layers use `activation`, the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            layers: vec![16, 64, 64, 16],
            activation: Activation::Relu,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 3 {
            return Err(Error::arg(format!(
                "encoder needs input, at least one hidden and an output layer, got sizes {:?}",
                self.layers
            )));
        }
        if self.layers.contains(&0) {
            return Err(Error::arg(format!(
                "layer sizes must be >= 1, got {:?}",
                self.layers
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.layers.last().expect("validated")
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-bound, bound).expect("finite positive bound");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized")
}

fn weight_name(layer: usize) -> String {
    format!("enc.{layer}.weight")
}

fn bias_name(layer: usize) -> String {
    format!("enc.{layer}.bias")
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    spec: MlpSpec,
    params: ParameterSet,
}

impl MlpEncoder {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(seed, rng::stream::INIT);
        let mut params = ParameterSet::new();
        for (l, pair) in spec.layers.windows(2).enumerate() {
            params.insert(weight_name(l), glorot(pair[0], pair[1], &mut rng))?;
            params.insert(bias_name(l), Matrix::zeros(1, pair[1]))?;
        }
        Ok(MlpEncoder {
            spec: spec.clone(),
            params,
        })
    }

    pub fn from_params(spec: &MlpSpec, params: ParameterSet) -> Result<Self> {
        spec.validate()?;
        for (l, pair) in spec.layers.windows(2).enumerate() {
            let w = params.value(&weight_name(l))?;
            let b = params.value(&bias_name(l))?;
            if w.shape() != (pair[0], pair[1]) || b.shape() != (1, pair[1]) {
                return Err(Error::Checkpoint(format!(
                    "layer {l} has weight {:?} / bias {:?}, expected ({}, {}) / (1, {})",
                    w.shape(),
                    b.shape(),
                    pair[0],
                    pair[1],
                    pair[1]
                )));
            }
        }
        if params.len() != 2 * (spec.layers.len() - 1) {
            return Err(Error::Checkpoint("unexpected extra encoder parameters".into()));
        }
        Ok(MlpEncoder {
            spec: spec.clone(),
            params,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim()
    }

    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.encode_with(g, &self.params, x)
    }

    /// Forward pass reading parameters from `params` instead of `self`; the
    /// names must match this encoder's layout.
    pub fn encode_with(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::dim(
                "encode",
                g.value(x).shape(),
                (self.input_dim(), self.embed_dim()),
            ));
        }
        let n_layers = self.spec.layers.len() - 1;
        let mut h = x;
        for l in 0..n_layers {
            let w = g.param(params, &weight_name(l))?;
            let b = g.param(params, &bias_name(l))?;
            let lin = g.matmul(h, w)?;
            h = g.add_row(lin, b)?;
            if l + 1 < n_layers {
                h = match self.spec.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Embeddings without recording gradients for the caller.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = self.encode(&mut g, xv)?;
        Ok(g.value(z).clone())
    }
}

/// Fixed per-feature affine map `(z - mean) / std` applied before the
/// predictor's trainable weights. It is fitted once from data and never
/// touched by an optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations of `z`; a constant
    /// column gets std 1 so it only loses its offset.
    pub fn fit(z: &Matrix) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::arg("cannot fit a standardizer on zero rows"));
        }
        let n = z.rows() as f64;
        let mut mean = vec![0.0; z.cols()];
        for r in 0..z.rows() {
            for (m, v) in mean.iter_mut().zip(z.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; z.cols()];
        for r in 0..z.rows() {
            for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let d = self.dim();
        let shift = g.constant(Matrix::from_vec(1, d, self.mean.iter().map(|m| -m).collect())?);
        let mut diag = Matrix::zeros(d, d);
        for (i, s) in self.std.iter().enumerate() {
            diag.data_mut()[i * d + i] = 1.0 / s;
        }
        let diag = g.constant(diag);
        let centered = g.add_row(z, shift)?;
        g.matmul(centered, diag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    params: ParameterSet,
    input: Option<Standardizer>,
}

impl LinearPredictor {
    pub fn init(embed_dim: usize, seed: u64) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::arg("predictor input dimension must be >= 1"));
        }
        let mut rng = rng::seeded(seed, rng::stream::INIT_HEAD);
        let mut params = ParameterSet::new();
        params.insert(HEAD_WEIGHT, glorot(embed_dim, 1, &mut rng))?;
        params.insert(HEAD_BIAS, Matrix::zeros(1, 1))?;
        Ok(LinearPredictor { params, input: None })
    }

    pub fn from_params(params: ParameterSet) -> Result<Self> {
        let w = params.value(HEAD_WEIGHT)?;
        let b = params.value(HEAD_BIAS)?;
        if w.cols() != 1 || b.shape() != (1, 1) || params.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "predictor weight {:?} / bias {:?} are not d_e x 1 / 1 x 1",
                w.shape(),
                b.shape()
            )));
        }
        Ok(LinearPredictor { params, input: None })
    }

    pub fn input_standardizer(&self) -> Option<&Standardizer> {
        self.input.as_ref()
    }

    /// Installs (or with `None` removes) the fixed input standardization.
    pub fn set_input_standardizer(&mut self, s: Option<Standardizer>) -> Result<()> {
        if let Some(st) = &s {
            if st.dim() != self.input_dim() || st.std.len() != st.dim() {
                return Err(Error::dim("set_input_standardizer", (1, st.dim()), (self.input_dim(), 1)));
            }
            if st.std.iter().any(|v| !(*v > 0.0 && v.is_finite())) || st.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("standardizer needs finite means and positive stds"));
            }
        }
        self.input = s;
        Ok(())
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.value(HEAD_WEIGHT).expect("present").rows()
    }

    pub fn predict(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.predict_with(g, &self.params, z)
    }

    pub fn predict_with(&self, g: &mut Graph, params: &ParameterSet, z: Var) -> Result<Var> {
        let z = match &self.input {
            Some(st) => st.apply(g, z)?,
            None => z,
        };
        let w = g.param(params, HEAD_WEIGHT)?;
        let b = g.param(params, HEAD_BIAS)?;
        let lin = g.matmul(z, w)?;
        g.add_row(lin, b)
    }

    pub fn predict_matrix(&self, z: &Matrix) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let p = self.predict(&mut g, zv)?;
        Ok(g.value(p).data().to_vec())
    }
}

/// Encoder and predictor with independent parameter streams of one seed.
pub fn init_model(spec: &MlpSpec, seed: u64) -> Result<(MlpEncoder, LinearPredictor)> {
    let encoder = MlpEncoder::init(spec, seed)?;
    let predictor = LinearPredictor::init(spec.embed_dim(), seed)?;
    Ok((encoder, predictor))
}

pub const CHECKPOINT_FORMAT: &str = "rnc-lab-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    encoder: MlpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predictor_input: Option<Standardizer>,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Writes a JSON key -> array map. Values use shortest round-trip decimal
/// formatting, so loading restores every bit.
pub fn save_checkpoint(path: &Path, encoder: &MlpEncoder, predictor: &LinearPredictor) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, p) in encoder.params().iter().chain(predictor.params().iter()) {
        if !p.value.is_finite() {
            return Err(Error::Checkpoint(format!("parameter {name} is not finite")));
        }
        tensors.insert(
            name.to_string(),
            TensorRecord {
                shape: [p.value.rows(), p.value.cols()],
                data: p.value.data().to_vec(),
            },
        );
    }
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        encoder: encoder.spec().clone(),
        predictor_input: predictor.input_standardizer().cloned(),
        tensors,
    };
    let text = serde_json::to_string_pretty(&ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
    crate::data::write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpEncoder, LinearPredictor)> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", ckpt.format)));
    }
    let mut enc = ParameterSet::new();
    let mut head = ParameterSet::new();
    for (name, rec) in ckpt.tensors {
        let m = Matrix::from_vec(rec.shape[0], rec.shape[1], rec.data)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if name.starts_with("enc.") {
            enc.insert(name, m)?;
        } else if name.starts_with("head.") {
            head.insert(name, m)?;
        } else {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
    }
    let encoder = MlpEncoder::from_params(&ckpt.encoder, enc)?;
    let mut predictor = LinearPredictor::from_params(head)?;
    predictor.set_input_standardizer(ckpt.predictor_input)?;
    if predictor.input_dim() != encoder.embed_dim() {
        return Err(Error::Checkpoint("predictor does not match encoder output".into()));
    }
    Ok((encoder, predictor))
}
