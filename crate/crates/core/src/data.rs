//! Datasets, splits and two-view augmentation.
//!
//! The synthetic generator places labels `y ~ U[0, 1)` on a smooth curve
//! `phi(y) = (sin 2πy, cos 2πy, y, y²)` and mixes it into `p` features with a
//! seeded Gaussian matrix, so nearby labels have nearby inputs.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub label_name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<f64>) -> Result<Self> {
        let feature_names = (0..features.cols()).map(|c| format!("x{c}")).collect();
        Self::with_names(name, features, labels, feature_names, "y".to_string())
    }

    pub fn with_names(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        label_name: String,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim(
                "dataset",
                features.shape(),
                (labels.len(), features.cols()),
            ));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::arg("feature name count does not match columns"));
        }
        if let Some(i) = labels.iter().position(|y| !y.is_finite()) {
            return Err(Error::Numeric(format!("label {i} is {}", labels[i])));
        }
        if features.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("dataset features contain NaN".into()));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            feature_names,
            label_name,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
        }
    }

    /// `(min, max)` of the labels; `None` when empty.
    pub fn label_range(&self) -> Option<(f64, f64)> {
        let mut it = self.labels.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), y| (lo.min(y), hi.max(y))))
    }
}

fn manifold(y: f64) -> [f64; 4] {
    [(TAU * y).sin(), (TAU * y).cos(), y, y * y]
}

pub fn generate_synthetic(n: usize, p: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::arg(format!("synthetic data needs n >= 2, got {n}")));
    }
    let mut label_rng = rng::seeded(seed, stream::SYNTH_LABELS);
    let labels: Vec<f64> = (0..n).map(|_| label_rng.random::<f64>()).collect();

    let features = synthetic_features(&labels, p, noise_sigma, seed)?;
    Dataset::new(format!("synthetic-n{n}-p{p}"), features, labels)
}

/// Features `W phi(y) + eps` for given labels. `W` depends only on `seed` and
/// `p`, so datasets of different sizes drawn with one seed share the manifold.
pub fn synthetic_features(labels: &[f64], p: usize, noise_sigma: f64, seed: u64) -> Result<Matrix> {
    if p < 4 {
        return Err(Error::arg(format!("synthetic data needs p >= 4, got {p}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::arg(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut mix_rng = rng::seeded(seed, stream::SYNTH_MIXING);
    let mixing: Vec<f64> = (0..p * 4).map(|_| StandardNormal.sample(&mut mix_rng)).collect();

    let mut noise_rng = rng::seeded(seed, stream::SYNTH_NOISE);
    let mut features = Matrix::zeros(labels.len(), p);
    for (i, &y) in labels.iter().enumerate() {
        let phi = manifold(y);
        for r in 0..p {
            let clean: f64 = (0..4).map(|c| mixing[r * 4 + c] * phi[c]).sum();
            let eps = if noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                noise_sigma * z
            } else {
                0.0
            };
            features[(i, r)] = clean + eps;
        }
    }
    Ok(features)
}

/// Seventeen significant digits: enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("not a file path: {}", path.display())))?;
    let tmp_name = format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Header row with feature names then the label column; cells use
/// [`format_f64`].
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(&ds.label_name);
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|&v| format_f64(v)).collect();
        rec.push(format_f64(ds.labels[i]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

/// Features are every non-label column in header order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => csv_err(format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(csv_err("missing header row".into()));
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| csv_err(format!("label column `{label_column}` not found in header {header:?}")))?;
    if header.len() < 2 {
        return Err(csv_err("need at least one feature column besides the label".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => csv_err(format!(
                "ragged row {row}: {len} fields, header has {expected_len}"
            )),
            _ => csv_err(format!("row {row}: {e}")),
        })?;
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::CsvCell {
                path: path.to_path_buf(),
                row,
                col: c + 1,
                message: format!("non-numeric value `{cell}` in column `{}`", header[c]),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvCell {
                    path: path.to_path_buf(),
                    row,
                    col: c + 1,
                    message: format!("non-finite value `{cell}` in column `{}`", header[c]),
                });
            }
            if c == label_idx {
                labels.push(value);
            } else {
                data.push(value);
            }
        }
    }
    let n = labels.len();
    let features = Matrix::from_vec(n, header.len() - 1, data)?;
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::with_names(name, features, labels, feature_names, label_column.to_string())
}

/// How to partition a dataset into train and validation rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Shuffle, then the first `fraction` of rows train.
    Random { fraction: f64, seed: u64 },
    /// Validation is a uniform `val_fraction` sample of all rows; training is
    /// the rest minus every row whose label lies in `[lo, hi]`.
    HoldoutBand {
        lo: f64,
        hi: f64,
        val_fraction: f64,
        seed: u64,
    },
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Random { fraction, .. } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "random split fraction must be in (0, 1), got {fraction}"
                    )));
                }
            }
            SplitSpec::HoldoutBand {
                lo,
                hi,
                val_fraction,
                ..
            } => {
                if !(lo < hi) {
                    return Err(Error::Config(format!(
                        "holdout band needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
                if !(0.0..1.0).contains(&val_fraction) {
                    return Err(Error::Config(format!(
                        "holdout val_fraction must be in [0, 1), got {val_fraction}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The held-out label band, if any.
    pub fn band(&self) -> Option<(f64, f64)> {
        match *self {
            SplitSpec::HoldoutBand { lo, hi, .. } => Some((lo, hi)),
            SplitSpec::Random { .. } => None,
        }
    }
}

/// The middle 20% of the label range.
pub fn default_band(ds: &Dataset) -> Option<(f64, f64)> {
    let (lo, hi) = ds.label_range()?;
    let width = hi - lo;
    Some((lo + 0.4 * width, lo + 0.6 * width))
}

/// Returns `(train, val)`. Both keep the original row order.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let n = ds.len();
    let (mut train, mut val): (Vec<usize>, Vec<usize>) = match *spec {
        SplitSpec::Random { fraction, seed } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::seeded(seed, stream::SPLIT));
            let n_train = (fraction * n as f64).round() as usize;
            let val = idx.split_off(n_train.min(n));
            (idx, val)
        }
        SplitSpec::HoldoutBand {
            lo,
            hi,
            val_fraction,
            seed,
        } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::seeded(seed, stream::SPLIT));
            let n_val = (val_fraction * n as f64).round() as usize;
            let rest = idx.split_off(n_val.min(n));
            let train = rest
                .into_iter()
                .filter(|&i| !(lo..=hi).contains(&ds.labels[i]))
                .collect();
            (train, idx)
        }
    };
    if train.is_empty() {
        return Err(Error::Config(format!(
            "split {spec:?} leaves no training rows out of {n}"
        )));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((
        ds.subset(&train, format!("{}-train", ds.name)),
        ds.subset(&val, format!("{}-val", ds.name)),
    ))
}

/// Per-view feature noise and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub gaussian_sigma: f64,
    pub feature_dropout_p: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            gaussian_sigma: 0.05,
            feature_dropout_p: 0.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::arg(format!(
                "gaussian_sigma must be >= 0, got {}",
                self.gaussian_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.feature_dropout_p) {
            return Err(Error::arg(format!(
                "feature_dropout_p must be in [0, 1), got {}",
                self.feature_dropout_p
            )));
        }
        Ok(())
    }
}

/// Two independently augmented copies of each row: all first views, then all
/// second views. Returns the `2B x p` matrix and the source row of each view.
pub fn two_views(rows: &Matrix, spec: &AugmentSpec, step_seed: u64) -> Result<(Matrix, Vec<usize>)> {
    spec.validate()?;
    let b = rows.rows();
    let mut rng = rng::seeded(spec.seed, stream::AUGMENT_BASE.wrapping_add(step_seed));
    let noise = if spec.gaussian_sigma > 0.0 {
        Some(Normal::new(0.0, spec.gaussian_sigma).map_err(|e| Error::arg(e.to_string()))?)
    } else {
        None
    };
    let mut out = Matrix::zeros(2 * b, rows.cols());
    let mut source = Vec::with_capacity(2 * b);
    for view in 0..2 {
        for i in 0..b {
            let dst = view * b + i;
            for (o, &x) in out.row_mut(dst).iter_mut().zip(rows.row(i)) {
                let mut v = x;
                if let Some(dist) = &noise {
                    v += dist.sample(&mut rng);
                }
                if spec.feature_dropout_p > 0.0 && rng.random::<f64>() < spec.feature_dropout_p {
                    v = 0.0;
                }
                *o = v;
            }
            source.push(i);
        }
    }
    Ok((out, source))
}
