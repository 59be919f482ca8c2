//! Linear classifiers on a two-environment Gaussian mixture with a core and a
//! spurious mean direction: sampling, closed-form metrics, learning rules,
//! a duality-based verifier for margin-constrained classifiers, and a sweep
//! runner.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod kv;
pub mod model;
pub mod rng;
pub mod qp;
pub mod special;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{
    error_at_theta, invariance_gaps, normalized_margin, robust_error, sample_dataset,
    sample_orthogonal_means, spurious_core_ratio, train_accuracy, EnvironmentSpec, InvarianceGaps,
    LabeledDataset, LinearModel, ProblemInstance, RobustError, Truth, Vector,
};
pub use special::{gaussian_tail, gaussian_tail_inv};
