//! Configuration-driven sweeps over dimension and seed, with CSV / JSON output.

pub mod calibrate;
pub mod config;
pub mod record;
pub mod sweep;

pub use calibrate::{Constants, DEFAULT_CONSTANTS_FILE};
pub use config::{resolve_sigma, ExperimentConfig, Format, Method, PenaltyWeights, SigmaRule};
pub use record::{emit, load, Metrics, RunRecord, CSV_HEADER};
pub use sweep::{run_sweep, summarize, CellSummary};
