//! Neighbor-based test-time augmentation (TTA) for tabular anomaly detection.
//!
//! A test instance is scored together with synthetic variants built from its
//! nearest neighbors in the pooled train and test rows:
//!
//! 1. [`selector`] retrieves the `k` closest rows, using either Euclidean
//!    distance or a learned metric from a [`siamese`] network trained on
//!    [`iforest`] pseudo-labels.
//! 2. [`producers`] turns that neighborhood into `T` augmentations (k-Means
//!    centroids, SMOTE interpolation, or a Gaussian-noise baseline).
//! 3. The [`detector`] autoencoder scores the instance and every augmentation,
//!    and [`pipeline`] averages the `T + 1` reconstruction errors.
//!
//! [`eval`] wraps the whole procedure in stratified cross-validation and
//! reports ROC AUC per fold.

pub mod data_io;
pub mod detector;
pub mod error;
pub mod eval;
pub mod iforest;
pub mod neural;
pub mod pipeline;
pub mod producers;
pub mod seed;
pub mod selector;
pub mod siamese;

pub use error::{Error, Result};
