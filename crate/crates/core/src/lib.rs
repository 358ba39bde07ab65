//! Rank-and-contrast representation learning for scalar regression.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense fp64 matrices, a define-by-run reverse-mode autodiff
//!   graph, and a central finite-difference gradient checker.
//! - [`losses`]: the rank-and-contrast (RNC) loss with its brute-force twin,
//!   plus the L1 and binned supervised-contrastive baselines.
//! - [`model`]: MLP encoder `f: X -> R^d_e` and linear predictor `g: R^d_e -> R`.
//! - [`data`]: synthetic manifold data, CSV ingestion, splits and two-view
//!   augmentation.
//! - [`training`]: optimizers, the joint L1 and two-stage regimes, evaluation
//!   metrics and run logs.

pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
