//! Constants file and the searches that fill it.
//!
//! The file holds the preset constants (see [`PresetConstants`]) plus the
//! sweep defaults `kappa`, `max_iters` and the four penalty weights.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{max_margin, mean_estimator, two_phase_learn};
use crate::experiments::config::{ExperimentConfig, Method, PenaltyWeights, SigmaRule};
use crate::experiments::record::RunRecord;
use crate::experiments::sweep::{run_sweep, summarize};
use crate::kv::Table;
use crate::model::{normalized_margin, robust_error, spurious_core_ratio};
use crate::rng;
use crate::verifier::{theorem_preset, HypothesisMode, PresetConstants, CONSTANT_KEYS};

pub const DEFAULT_CONSTANTS_FILE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/constants.cfg");

const SWEEP_KEYS: [&str; 6] = ["kappa", "max_iters", "irm_weight", "vrex_weight", "groupdro_weight", "moment_weight"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub preset: PresetConstants,
    pub kappa: f64,
    pub max_iters: usize,
    pub weights: PenaltyWeights,
}

impl Constants {
    pub fn from_table(table: &Table) -> Result<Self> {
        let known: Vec<&str> = CONSTANT_KEYS.iter().chain(SWEEP_KEYS.iter()).copied().collect();
        table.reject_unknown(&known)?;
        let c = Self {
            preset: PresetConstants::from_table(table)?,
            kappa: table.require("kappa")?,
            max_iters: table.require("max_iters")?,
            weights: PenaltyWeights {
                irmv1: table.require("irm_weight")?,
                vrex: table.require("vrex_weight")?,
                groupdro: table.require("groupdro_weight")?,
                moment_match: table.require("moment_weight")?,
            },
        };
        if !(c.kappa > 0.0) {
            return Err(Error::Config { line: table.line_of("kappa"), field: "kappa".into(), msg: "must be positive".into() });
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&Table::parse(&std::fs::read_to_string(path)?)?)
    }

    pub fn load_default() -> Result<Self> {
        Self::load(Path::new(DEFAULT_CONSTANTS_FILE))
    }

    pub fn to_kv(&self) -> String {
        let w = &self.weights;
        format!(
            "{}kappa = {}\nmax_iters = {}\nirm_weight = {}\nvrex_weight = {}\ngroupdro_weight = {}\nmoment_weight = {}\n",
            self.preset.to_kv(),
            self.kappa,
            self.max_iters,
            w.irmv1,
            w.vrex,
            w.groupdro,
            w.moment_match
        )
    }

    /// Put the sweep defaults into a config.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.sigma_rule = SigmaRule::Scaling(self.kappa);
        cfg.train.max_iters = self.max_iters;
        cfg.weights = self.weights;
    }
}

/// Preset constants from one scale multiplier on the dimension constants.
pub fn scaled_constants(c_r: f64, big_c_r: f64, multiplier: f64, delta: f64) -> PresetConstants {
    PresetConstants {
        c_r,
        c_r_prime: c_r,
        big_c_r,
        c_d: multiplier,
        c_d_prime: multiplier,
        c_s: multiplier.sqrt(),
        c_c: multiplier.sqrt(),
        delta,
    }
}

/// Per-seed outcomes of the three preset checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PresetHits {
    pub seeds: usize,
    /// Mean estimator reaches normalized margin `1/(4√N)`.
    pub mean_margin: usize,
    /// Max-margin has spurious/core ratio ≥ 1 and robust error ≥ 1/2.
    pub max_margin_spurious: usize,
    /// Two-phase robust error at most ε.
    pub two_phase_robust: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetCheck {
    MeanMargin,
    MaxMarginSpurious,
    TwoPhaseRobust,
}

/// Run the selected checks on seeds `0..seeds` of the preset at the largest
/// margin the hypotheses allow, `γ = 1/(4√N)`.
pub fn preset_hits(
    n_1: usize,
    n_2: usize,
    epsilon: f64,
    thetas: (f64, f64),
    constants: &PresetConstants,
    seeds: u64,
    checks: &[PresetCheck],
) -> Result<PresetHits> {
    let gamma = 1.0 / (4.0 * ((n_1 + n_2) as f64).sqrt());
    let p = theorem_preset(n_1, n_2, gamma, epsilon, constants, HypothesisMode::Relaxed)?;
    let one = |s: u64| -> Result<[bool; 3]> {
        let inst = p.instance(thetas, s)?;
        let data = inst.sample_default()?;
        let mut hit = [false; 3];
        if checks.contains(&PresetCheck::MeanMargin) {
            hit[0] = normalized_margin(&mean_estimator(&data)?, &data, p.sigma)? >= gamma;
        }
        if checks.contains(&PresetCheck::MaxMarginSpurious) {
            let mm = max_margin(&data, 1e-9)?;
            let ratio = spurious_core_ratio(&mm, &inst.mu_c, &inst.mu_s)?;
            hit[1] = ratio >= 1.0 && robust_error(&mm, &inst.mu_c, &inst.mu_s, p.sigma)?.error >= 0.5;
        }
        if checks.contains(&PresetCheck::TwoPhaseRobust) {
            let mut r = rng::stream(s, &[rng::purpose::METHOD]);
            let (w, _) = two_phase_learn(&data.env_subset(1), &data.env_subset(2), &mut r)?;
            hit[2] = robust_error(&w, &inst.mu_c, &inst.mu_s, p.sigma)?.error <= epsilon;
        }
        Ok(hit)
    };
    let outcomes: Vec<Result<[bool; 3]>> = (0..seeds).into_par_iter().map(one).collect();
    let mut h = PresetHits { seeds: seeds as usize, ..Default::default() };
    for o in outcomes {
        match o {
            Ok(hit) => {
                h.mean_margin += hit[0] as usize;
                h.max_margin_spurious += hit[1] as usize;
                h.two_phase_robust += hit[2] as usize;
            }
            Err(_) => h.errors += 1,
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetTrial {
    pub n: usize,
    pub big_c_r: f64,
    pub multiplier: f64,
    pub hits: PresetHits,
    pub passes: bool,
}

#[derive(Debug, Clone)]
pub struct PresetSearch {
    /// `N_1 = N_2 = n/2` for each entry.
    pub sizes: Vec<usize>,
    pub big_c_r_grid: Vec<f64>,
    /// Ascending; the first passing value wins.
    pub multiplier_grid: Vec<f64>,
    pub c_r: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub seeds: u64,
    /// Required shares for the mean, max-margin and two-phase checks.
    pub rates: [f64; 3],
}

impl Default for PresetSearch {
    fn default() -> Self {
        Self {
            sizes: vec![80, 160],
            big_c_r_grid: vec![1.0, 2.0],
            multiplier_grid: vec![0.25, 0.5, 0.75, 1.0],
            c_r: 1.0,
            delta: 0.01,
            epsilon: 0.1,
            seeds: 100,
            rates: [0.95, 0.9, 0.95],
        }
    }
}

/// Smallest multiplier (then smallest `C_r`) at which every size meets the
/// required rates. Returns the winner, if any, and every trial run.
pub fn search_preset(search: &PresetSearch) -> Result<(Option<PresetConstants>, Vec<PresetTrial>)> {
    let checks = [PresetCheck::MeanMargin, PresetCheck::MaxMarginSpurious, PresetCheck::TwoPhaseRobust];
    let mut trials = Vec::new();
    for &multiplier in &search.multiplier_grid {
        for &big_c_r in &search.big_c_r_grid {
            let c = scaled_constants(search.c_r, big_c_r, multiplier, search.delta);
            let mut all = true;
            for &n in &search.sizes {
                let hits = preset_hits(n / 2, n - n / 2, search.epsilon, (1.0, 0.0), &c, search.seeds, &checks)?;
                let need = |rate: f64| (rate * search.seeds as f64).ceil() as usize;
                let passes = hits.mean_margin >= need(search.rates[0])
                    && hits.max_margin_spurious >= need(search.rates[1])
                    && hits.two_phase_robust >= need(search.rates[2]);
                trials.push(PresetTrial { n, big_c_r, multiplier, hits, passes });
                if !passes {
                    all = false;
                    break;
                }
            }
            if all {
                return Ok((Some(c), trials));
            }
        }
    }
    Ok((None, trials))
}

/// Outcome of the dimension-sweep reproduction checks at the smallest and
/// largest dimension of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ReproductionReport {
    pub d_small: usize,
    pub d_large: usize,
    pub vrex_small: f64,
    pub erm_small: f64,
    /// Interpolating share of erm, irmv1 and vrex at the largest d.
    pub interpolating_large: [f64; 3],
    /// Median robust accuracy of erm, irmv1 and vrex at the largest d.
    pub robust_large: [f64; 3],
    pub two_phase_interpolating: f64,
    pub two_phase_large: f64,
    pub oracle_interpolating: Option<f64>,
    pub oracle_large: Option<f64>,
    pub errors: usize,
}

/// Thresholds for [`ReproductionReport::verdicts`].
pub const VREX_GAIN_SMALL: f64 = 0.05;
pub const SPREAD_LARGE: f64 = 0.05;
pub const TWO_PHASE_GAIN_LARGE: f64 = 0.15;
pub const ORACLE_ROBUST: f64 = 0.9;
/// Share of seeds that must interpolate for a method to count as interpolating.
pub const INTERPOLATING_SHARE: f64 = 0.5;

impl ReproductionReport {
    pub fn from_records(records: &[RunRecord], d_small: usize, d_large: usize) -> Result<Self> {
        let med = |m: Method, d: usize| {
            summarize(records, m, d)
                .median_robust_acc
                .ok_or_else(|| Error::InvalidArgument(format!("no successful {m} runs at d = {d}")))
        };
        let share = |m: Method, d: usize| summarize(records, m, d).interpolating_share.unwrap_or(0.0);
        let big = [Method::Erm, Method::Irmv1, Method::Vrex];
        let oracle = records.iter().any(|r| r.method == Method::OracleNoSpurious);
        Ok(Self {
            d_small,
            d_large,
            vrex_small: med(Method::Vrex, d_small)?,
            erm_small: med(Method::Erm, d_small)?,
            interpolating_large: big.map(|m| share(m, d_large)),
            robust_large: [med(big[0], d_large)?, med(big[1], d_large)?, med(big[2], d_large)?],
            two_phase_interpolating: share(Method::TwoPhase, d_large),
            two_phase_large: med(Method::TwoPhase, d_large)?,
            oracle_interpolating: oracle.then(|| share(Method::OracleNoSpurious, d_large)),
            oracle_large: if oracle { Some(med(Method::OracleNoSpurious, d_large)?) } else { None },
            errors: records.iter().filter(|r| r.outcome.is_err()).count(),
        })
    }

    /// Parts (a), (b), (c) of the reproduction, then the oracle check.
    pub fn verdicts(&self) -> [bool; 4] {
        let spread = self.robust_large.iter().cloned().fold(f64::MIN, f64::max)
            - self.robust_large.iter().cloned().fold(f64::MAX, f64::min);
        let a = self.vrex_small >= self.erm_small + VREX_GAIN_SMALL;
        let b = self.interpolating_large.iter().all(|&s| s > INTERPOLATING_SHARE) && spread <= SPREAD_LARGE;
        let c = self.two_phase_interpolating <= INTERPOLATING_SHARE
            && self.two_phase_large >= self.robust_large[0] + TWO_PHASE_GAIN_LARGE;
        let oracle = self.oracle_interpolating.is_some_and(|s| s > INTERPOLATING_SHARE)
            && self.oracle_large.is_some_and(|r| r >= ORACLE_ROBUST);
        [a, b, c, oracle]
    }
}

/// The reduced-scale dimension sweep used for calibration and acceptance.
pub fn reduced_sweep_config(constants: &Constants, seeds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        "d_grid = 20, 100, 1000, 10000\nn1 = 160\nn2 = 20\ntheta1 = 1\ntheta2 = 0\nrc = 1\nrs = 2\nkappa = 1\n\
         methods = erm, irmv1, vrex, two_phase, mean, oracle_no_spurious\n",
    )
    .expect("built-in config parses");
    cfg.seeds = seeds;
    constants.apply(&mut cfg);
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaTrial {
    pub kappa: f64,
    pub mean_interpolating: f64,
    pub oracle_robust: f64,
    pub passes: bool,
}

/// Smallest κ in `grid` (ascending) at which, at the largest d, the mean
/// estimator interpolates in at least 95% of seeds and the oracle's median
/// robust accuracy reaches [`ORACLE_ROBUST`].
pub fn search_kappa(base: &ExperimentConfig, grid: &[f64]) -> Result<(Option<f64>, Vec<KappaTrial>)> {
    let d = *base.d_grid.last().expect("validated grid");
    let mut trials = Vec::new();
    for &kappa in grid {
        let cfg = ExperimentConfig {
            d_grid: vec![d],
            methods: vec![Method::Mean, Method::OracleNoSpurious],
            sigma_rule: SigmaRule::Scaling(kappa),
            ..base.clone()
        };
        let records = run_sweep(&cfg)?;
        let mean = summarize(&records, Method::Mean, d);
        let oracle = summarize(&records, Method::OracleNoSpurious, d);
        let mean_interpolating =
            mean.interpolating_share.unwrap_or(0.0) * (mean.runs - mean.errors) as f64 / mean.runs as f64;
        let oracle_robust = oracle.median_robust_acc.unwrap_or(0.0);
        let passes = mean_interpolating >= 0.95 && oracle_robust >= ORACLE_ROBUST;
        trials.push(KappaTrial { kappa, mean_interpolating, oracle_robust, passes });
        if passes {
            return Ok((Some(kappa), trials));
        }
    }
    Ok((None, trials))
}
