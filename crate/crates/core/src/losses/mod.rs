//! Representation and regression losses.
//!
//! [`rnc_loss`] is the rank-and-contrast objective: for an anchor `i` and a
//! candidate `j`, the candidate's likelihood is a softmax of similarities over
//! the ranking set `S_{i,j}` of samples whose label is at least as far from
//! the anchor's label as `y_j` is. The loss is the mean negative
//! log-likelihood over all ordered pairs `(i, j)`, `i != j`.
//!
//! [`rnc_loss_bruteforce`] evaluates the same quantity with a literal triple
//! loop and shares no code with the fast path; it exists to check it.

mod l1;
mod oracle;
mod rnc;
mod similarity;
mod supcon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use l1::l1_loss;
pub use oracle::rnc_loss_bruteforce;
pub use rnc::{higher_rank_set, rnc_loss, rnc_loss_from_similarity};
pub use similarity::similarity_matrix;
pub use supcon::{supcon_binned_loss, supcon_loss_from_similarity};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Pairwise similarity between embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Similarity {
    /// `-sqrt(||v_i - v_j||^2 + 1e-12)`.
    #[default]
    #[serde(rename = "neg-l2")]
    NegL2,
    #[serde(rename = "cosine")]
    Cosine,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::NegL2 => "neg-l2",
            Similarity::Cosine => "cosine",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg-l2" => Ok(Similarity::NegL2),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::arg(format!(
                "unknown similarity `{other}` (expected neg-l2 or cosine)"
            ))),
        }
    }
}

/// Rank-and-contrast loss settings. Each anchor's term is averaged over its
/// `M - 1` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RncConfig {
    pub tau: f64,
    pub similarity: Similarity,
}

impl Default for RncConfig {
    fn default() -> Self {
        RncConfig {
            tau: 2.0,
            similarity: Similarity::NegL2,
        }
    }
}

impl RncConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)
    }
}

/// Supervised contrastive loss over equal-width label bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupConBinConfig {
    pub tau: f64,
    pub bin_width: f64,
    pub similarity: Similarity,
}

impl Default for SupConBinConfig {
    fn default() -> Self {
        SupConBinConfig {
            tau: 2.0,
            bin_width: 0.1,
            similarity: Similarity::NegL2,
        }
    }
}

impl SupConBinConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::arg(format!(
                "bin_width must be > 0, got {}",
                self.bin_width
            )));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `M` embedding rows (two views per source sample) and their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub embeddings: Var,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn new(g: &Graph, embeddings: Var, labels: Vec<f64>) -> Result<Self> {
        let m = g.value(embeddings).rows();
        validate_labels(&labels, m)?;
        Ok(Batch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub(crate) fn validate_labels(labels: &[f64], rows: usize) -> Result<()> {
    if rows < 2 {
        return Err(Error::arg(format!("batch needs at least 2 samples, got {rows}")));
    }
    if labels.len() != rows {
        return Err(Error::dim("batch labels", (rows, 1), (labels.len(), 1)));
    }
    if let Some(i) = labels.iter().position(|y| !y.is_finite()) {
        return Err(Error::Numeric(format!("label {i} is {}", labels[i])));
    }
    Ok(())
}
