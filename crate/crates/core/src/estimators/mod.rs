//! Learning rules.

pub mod alignment;
pub mod gd;
pub mod max_margin;
pub mod mean;
pub mod two_phase;

pub use alignment::{irm_margin_alignment, AlignmentConfig, AlignmentRow};
pub use gd::{gd_train, gd_train_from, objective, Objective, PenaltyKind, Trace, TraceRow, TrainConfig};
pub use max_margin::{max_margin, max_margin_detailed, MaxMarginOptions, MaxMarginSolution};
pub use mean::{mean_estimator, per_env_mean};
pub use two_phase::{
    two_phase_learn, two_phase_learn_with, Choice, EoppForm, StageTwo, TwoPhaseConfig, TwoPhaseDiagnostics,
};
