//! Numerical checks of the impossibility argument for margin-constrained
//! classifiers: the coefficient-space program and its dual, the closed-form
//! bound, concentration events, and parameter presets.

pub mod chain;
pub mod events;
pub mod preset;
pub mod program;

pub use chain::{bound_chain_study, ChainConfig, ChainRecord, ChainStudy};
pub use events::{check_spectral_events, expected_gram, orthogonal_complement_stats, span_decomposition, Event, EventReport};
pub use preset::{theorem_preset, HypothesisMode, PresetConstants, PresetParams, CONSTANT_KEYS};
pub use program::{
    canonical_alpha, closed_form_bound, dual_value, min_weighted_beta, BetaSolution, GramData, MIN_EIGENVALUE,
};
