//! Sweep configuration, read from a flat `key = value` file.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `d_grid` | comma-separated dimensions, strictly increasing | required |
//! | `seeds` | repetitions per dimension | 15 |
//! | `seed` | base seed | 0 |
//! | `n1`, `n2` | environment sizes | 800, 100 |
//! | `theta1`, `theta2` | spurious coefficients | 1, 0 |
//! | `rc`, `rs` | mean norms | 1, 2 |
//! | `sigma` / `kappa` | fixed noise level, or `σ = r_c/(κ (d/N)^¼)` | one of them required; the CLI fills `kappa` from the constants file |
//! | `methods` | comma-separated method names | all |
//! | `lr`, `max_iters`, `tolerance`, `l2`, `anneal_iters` | gradient descent | 0.1, 2000, 1e-8, 0, none |
//! | `irm_weight`, `vrex_weight`, `groupdro_weight`, `moment_weight` | penalty weights | 1, 10, 1, 1 |
//! | `two_phase_stage` | `eopp` or `vrex` | `eopp` |
//! | `output` | output path | none |
//! | `format` | `csv` or `json` | `csv` |
//! | `timing` | record wall time (makes output nondeterministic) | false |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{PenaltyKind, TrainConfig, TwoPhaseConfig};
use crate::kv::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Irmv1,
    Vrex,
    GroupDro,
    MomentMatch,
    TwoPhase,
    Mean,
    MaxMargin,
    OracleNoSpurious,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Erm,
        Method::Irmv1,
        Method::Vrex,
        Method::GroupDro,
        Method::MomentMatch,
        Method::TwoPhase,
        Method::Mean,
        Method::MaxMargin,
        Method::OracleNoSpurious,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irmv1 => "irmv1",
            Method::Vrex => "vrex",
            Method::GroupDro => "groupdro",
            Method::MomentMatch => "moment_match",
            Method::TwoPhase => "two_phase",
            Method::Mean => "mean",
            Method::MaxMargin => "max_margin",
            Method::OracleNoSpurious => "oracle_no_spurious",
        }
    }

    /// Penalty used by the gradient-descent methods.
    pub fn penalty(self) -> Option<PenaltyKind> {
        match self {
            Method::Erm | Method::OracleNoSpurious => Some(PenaltyKind::None),
            Method::Irmv1 => Some(PenaltyKind::Irmv1),
            Method::Vrex => Some(PenaltyKind::Vrex),
            Method::GroupDro => Some(PenaltyKind::GroupDro),
            Method::MomentMatch => Some(PenaltyKind::MomentMatch),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    Fixed(f64),
    /// `(r_c/σ)² = κ²·√(d/N)`.
    Scaling(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyWeights {
    pub irmv1: f64,
    pub vrex: f64,
    pub groupdro: f64,
    pub moment_match: f64,
}

impl PenaltyWeights {
    pub fn get(&self, kind: PenaltyKind) -> f64 {
        match kind {
            PenaltyKind::None => 0.0,
            PenaltyKind::Irmv1 => self.irmv1,
            PenaltyKind::Vrex => self.vrex,
            PenaltyKind::GroupDro => self.groupdro,
            PenaltyKind::MomentMatch => self.moment_match,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d_grid: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
    pub n_1: usize,
    pub n_2: usize,
    pub theta_1: f64,
    pub theta_2: f64,
    pub r_c: f64,
    pub r_s: f64,
    pub sigma_rule: SigmaRule,
    pub methods: Vec<Method>,
    /// Shared descent settings; the penalty kind and weight are set per method.
    pub train: TrainConfig,
    pub weights: PenaltyWeights,
    pub two_phase: TwoPhaseConfig,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub timing: bool,
}

pub const CONFIG_KEYS: [&str; 25] = [
    "d_grid",
    "seeds",
    "seed",
    "n1",
    "n2",
    "theta1",
    "theta2",
    "rc",
    "rs",
    "sigma",
    "kappa",
    "methods",
    "lr",
    "max_iters",
    "tolerance",
    "l2",
    "anneal_iters",
    "irm_weight",
    "vrex_weight",
    "groupdro_weight",
    "moment_weight",
    "two_phase_stage",
    "output",
    "format",
    "timing",
];

fn field_error(table: &Table, key: &str, msg: impl Into<String>) -> Error {
    Error::Config { line: table.line_of(key), field: key.to_string(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn from_table(table: &Table) -> Result<Self> {
        table.reject_unknown(&CONFIG_KEYS)?;
        let d_grid: Vec<usize> = table.parse_list("d_grid")?.ok_or_else(|| field_error(table, "d_grid", "missing"))?;
        let sigma_rule = match (table.parse_value::<f64>("sigma")?, table.parse_value::<f64>("kappa")?) {
            (Some(s), None) => SigmaRule::Fixed(s),
            (None, Some(k)) => SigmaRule::Scaling(k),
            (Some(_), Some(_)) => return Err(field_error(table, "sigma", "set either sigma or kappa, not both")),
            (None, None) => return Err(field_error(table, "kappa", "set sigma or kappa")),
        };
        let methods = match table.parse_list::<Method>("methods")? {
            Some(m) => m,
            None => Method::ALL.to_vec(),
        };
        let stage = table.parse_value::<String>("two_phase_stage")?.unwrap_or_else(|| "eopp".into());
        let vrex_weight = table.parse_value("vrex_weight")?.unwrap_or(10.0);
        let two_phase = match stage.as_str() {
            "eopp" => TwoPhaseConfig::default(),
            "vrex" => TwoPhaseConfig::vrex(vrex_weight),
            other => return Err(field_error(table, "two_phase_stage", format!("expected eopp or vrex, got `{other}`"))),
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: table.parse_value("lr")?.unwrap_or(defaults.learning_rate),
            max_iters: table.parse_value("max_iters")?.unwrap_or(2_000),
            tolerance: table.parse_value("tolerance")?.unwrap_or(defaults.tolerance),
            l2_weight: table.parse_value("l2")?.unwrap_or(0.0),
            anneal_iters: table.parse_value("anneal_iters")?,
            log_every: usize::MAX,
            ..defaults
        };
        let cfg = Self {
            d_grid,
            seeds: table.parse_value("seeds")?.unwrap_or(15),
            seed: table.parse_value("seed")?.unwrap_or(0),
            n_1: table.parse_value("n1")?.unwrap_or(800),
            n_2: table.parse_value("n2")?.unwrap_or(100),
            theta_1: table.parse_value("theta1")?.unwrap_or(1.0),
            theta_2: table.parse_value("theta2")?.unwrap_or(0.0),
            r_c: table.parse_value("rc")?.unwrap_or(1.0),
            r_s: table.parse_value("rs")?.unwrap_or(2.0),
            sigma_rule,
            methods,
            train,
            weights: PenaltyWeights {
                irmv1: table.parse_value("irm_weight")?.unwrap_or(1.0),
                vrex: vrex_weight,
                groupdro: table.parse_value("groupdro_weight")?.unwrap_or(1.0),
                moment_match: table.parse_value("moment_weight")?.unwrap_or(1.0),
            },
            two_phase,
            output_path: table.parse_value::<String>("output")?.map(PathBuf::from),
            format: table.parse_value("format")?.unwrap_or(Format::Csv),
            timing: table.parse_value("timing")?.unwrap_or(false),
        };
        cfg.validate().map_err(|(key, msg)| field_error(table, key, msg))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(&Table::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks the invariants, naming the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.d_grid.is_empty() {
            return Err(("d_grid", "must not be empty".into()));
        }
        if self.d_grid[0] < 2 {
            return Err(("d_grid", "dimensions must be at least 2".into()));
        }
        if self.d_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(("d_grid", "must be strictly increasing".into()));
        }
        if self.seeds == 0 {
            return Err(("seeds", "must be at least 1".into()));
        }
        if self.n_1 == 0 {
            return Err(("n1", "must be at least 1".into()));
        }
        if self.n_2 == 0 {
            return Err(("n2", "must be at least 1".into()));
        }
        for (key, t) in [("theta1", self.theta_1), ("theta2", self.theta_2)] {
            if !(-1.0..=1.0).contains(&t) {
                return Err((key, format!("must lie in [-1, 1], got {t}")));
            }
        }
        for (key, r) in [("rc", self.r_c), ("rs", self.r_s)] {
            if !(r >= 0.0) || !r.is_finite() {
                return Err((key, format!("must be a nonnegative number, got {r}")));
            }
        }
        match self.sigma_rule {
            SigmaRule::Fixed(s) if !(s > 0.0) => return Err(("sigma", format!("must be positive, got {s}"))),
            SigmaRule::Scaling(k) if !(k > 0.0) => return Err(("kappa", format!("must be positive, got {k}"))),
            SigmaRule::Scaling(_) if !(self.r_c > 0.0) => return Err(("rc", "the kappa rule needs rc > 0".into())),
            _ => {}
        }
        if self.methods.is_empty() {
            return Err(("methods", "must not be empty".into()));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(("methods", "lists a method twice".into()));
        }
        for (key, w) in [
            ("irm_weight", self.weights.irmv1),
            ("vrex_weight", self.weights.vrex),
            ("groupdro_weight", self.weights.groupdro),
            ("moment_weight", self.weights.moment_match),
        ] {
            if !(w >= 0.0) {
                return Err((key, format!("must be nonnegative, got {w}")));
            }
        }
        self.train.validate().map_err(|e| ("lr", e.to_string()))?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_1 + self.n_2
    }

    pub fn train_config(&self, method: Method) -> Option<TrainConfig> {
        let kind = method.penalty()?;
        Some(TrainConfig { penalty_kind: kind, penalty_weight: self.weights.get(kind), ..self.train.clone() })
    }
}

/// Noise level for dimension `d`.
pub fn resolve_sigma(rule: SigmaRule, d: usize, n: usize, r_c: f64) -> Result<f64> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("d and N must be positive".into()));
    }
    match rule {
        SigmaRule::Fixed(s) if s > 0.0 => Ok(s),
        SigmaRule::Fixed(s) => Err(Error::InvalidArgument(format!("sigma must be positive, got {s}"))),
        SigmaRule::Scaling(k) if k > 0.0 => Ok(r_c / (k * (d as f64 / n as f64).powf(0.25))),
        SigmaRule::Scaling(k) => Err(Error::InvalidArgument(format!("kappa must be positive, got {k}"))),
    }
}
