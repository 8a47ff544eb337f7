//! Sharpness-aware parameter selection for machine unlearning.
//!
//! The crate trains small classifiers on (optionally label-poisoned) data,
//! estimates the diagonal of the training-loss Hessian at the learned
//! parameters, selects the low-sharpness parameters or layers, and applies
//! masked one-step first-order and second-order unlearning updates,
//! benchmarked against fine-tuning and retrain-from-scratch oracles.
//!
//! Module map:
//! - [`gradcore`]: reverse-mode differentiation over dense `f64` arrays with
//!   exact Hessian-vector products (forward-over-reverse).
//! - [`models`]: MLP / small-CNN architectures, SGD training, checkpoints.
//! - [`datahub`]: IDX/CSV ingestion, synthetic blobs, label poisoning and
//!   the retain / forget / replacement / held-out split bookkeeping.
//! - [`curvature`]: exact and Hutchinson estimators of `diag(H)` plus
//!   layer-wise sharpness aggregates.
//! - [`selection`]: turns a curvature report into a parameter mask.
//! - [`unlearn`]: forget loss, masked one-step updates (first- and
//!   second-order via CG), fine-tuning baseline, retrain oracle and the
//!   relearn attack evaluator.
//! - [`quadoracle`]: closed-form ridge testbed where optimum, Hessian and
//!   retrained optimum are analytic.
//! - [`evalkit`]: efficacy / fidelity / utility metrics and multi-seed
//!   aggregation.

pub mod curvature;
pub mod datahub;
pub mod error;
pub mod evalkit;
pub mod fingerprint;
pub mod gradcore;
pub mod models;
pub mod quadoracle;
pub mod rng;
pub mod selection;
pub mod textkv;
pub mod unlearn;

pub use error::{CoreError, Result};
