//! Kernel ridgeless regression with locally-adaptive-bandwidth (LAB) RBF kernels.
//!
//! The estimator interpolates a small support set with an asymmetric kernel
//! whose per-point bandwidths are learned by SGD on the remaining data, while
//! the support set grows until every training point is fit within a squared
//! error tolerance.
//!
//! Module map:
//! - [`numerics`]: dense matrices and the pivoted LU solve
//! - [`kernels`]: RBF and LAB kernel values, matrices and bandwidth gradients
//! - [`ridgeless`]: the LAB interpolant, asymmetric KRR duals, model files
//! - [`trainer`]: bandwidth SGD and dynamic support growth
//! - [`data`]: CSV ingestion, normalization, splits, synthetic functions
//! - [`eval`]: R², MSE, clamp projection, sparsity count
//! - [`bench`]: repeated-trial experiments and results files

// `!(a > b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod numerics;
pub mod ridgeless;
pub mod trainer;

pub use data::{Dataset, NormMeta, SplitSpec, SynthFunction};
pub use error::{LabError, Result};
pub use eval::EvalReport;
pub use kernels::{BandwidthSet, ThetaBounds};
pub use numerics::{RealMatrix, RealVector};
pub use ridgeless::{AsymDualSolution, LabModel};
pub use trainer::{TrainConfig, TrainTrace};
