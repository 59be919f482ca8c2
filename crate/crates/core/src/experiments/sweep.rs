//! Sweep over (d, seed) cells. Every method in a cell sees the same sampled
//! instance and training set.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::Result;
use crate::estimators::{gd_train, max_margin, mean_estimator, two_phase_learn_with};
use crate::experiments::config::{resolve_sigma, ExperimentConfig, Method};
use crate::experiments::record::{Metrics, RunRecord};
use crate::model::{
    invariance_gaps, normalized_margin, robust_error, spurious_core_ratio, train_accuracy, LabeledDataset,
    LinearModel, ProblemInstance,
};
use crate::rng;

/// Pool size for sweeps, from `ILAB_WORKERS` when set.
pub fn worker_count() -> Option<usize> {
    std::env::var("ILAB_WORKERS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn method_id(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).expect("method listed") as u64
}

/// Seed for repetition `s` of the sweep.
pub fn instance_seed(base: u64, s: usize) -> u64 {
    rng::child_seed(base, &[s as u64])
}

pub fn cell_instance(cfg: &ExperimentConfig, d: usize, s: usize) -> Result<ProblemInstance> {
    let sigma = resolve_sigma(cfg.sigma_rule, d, cfg.n(), cfg.r_c)?;
    ProblemInstance::sample(
        d,
        (cfg.r_c, cfg.r_s),
        (cfg.theta_1, cfg.theta_2),
        (cfg.n_1, cfg.n_2),
        sigma,
        instance_seed(cfg.seed, s),
    )
}

/// Training rows with the spurious mean removed: `x − y θ_e μ_s`.
pub fn without_spurious(inst: &ProblemInstance, data: &LabeledDataset) -> LabeledDataset {
    data.map_rows(|env, y, x| x.axpy(-f64::from(y) * inst.theta(env), &inst.mu_s, 1.0))
}

fn evaluate(model: &LinearModel, inst: &ProblemInstance, train: &LabeledDataset, wall_ms: u64) -> Result<Metrics> {
    let acc = train_accuracy(model, train)?;
    let margin = normalized_margin(model, train, inst.sigma)?;
    let robust = robust_error(model, &inst.mu_c, &inst.mu_s, inst.sigma)?.error;
    let ratio = spurious_core_ratio(model, &inst.mu_c, &inst.mu_s).ok();
    let unit = LinearModel::new(model.w() / model.norm())?;
    let eopp = invariance_gaps(&unit, &train.env_subset(1), &train.env_subset(2), None).ok().map(|g| g.eopp_gap);
    Ok(Metrics::new(acc, 1.0 - robust, margin, ratio, eopp, wall_ms))
}

fn run_method(cfg: &ExperimentConfig, method: Method, inst: &ProblemInstance, data: &LabeledDataset) -> Result<Metrics> {
    let start = Instant::now();
    let (model, train) = match method {
        Method::Mean => (mean_estimator(data)?, None),
        Method::MaxMargin => (max_margin(data, 1e-9)?, None),
        Method::TwoPhase => {
            let mut r = rng::stream(inst.seed, &[rng::purpose::METHOD, inst.d() as u64, method_id(method)]);
            let (s1, s2) = (data.env_subset(1), data.env_subset(2));
            (two_phase_learn_with(&s1, &s2, &mut r, &cfg.two_phase)?.0, None)
        }
        Method::OracleNoSpurious => {
            let clean = without_spurious(inst, data);
            let tc = cfg.train_config(method).expect("gradient method");
            (gd_train(&clean, &tc)?.0, Some(clean))
        }
        _ => (gd_train(data, &cfg.train_config(method).expect("gradient method"))?.0, None),
    };
    let wall_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
    evaluate(&model, inst, train.as_ref().unwrap_or(data), wall_ms)
}

fn run_cell(cfg: &ExperimentConfig, d: usize, s: usize) -> Vec<RunRecord> {
    let seed = instance_seed(cfg.seed, s);
    let sampled = cell_instance(cfg, d, s).and_then(|inst| {
        let data = inst.sample_default()?;
        Ok((inst, data))
    });
    cfg.methods
        .iter()
        .map(|&method| {
            let outcome = match &sampled {
                Ok((inst, data)) => run_method(cfg, method, inst, data).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            RunRecord { method, d, seed, outcome }
        })
        .collect()
}

/// Every (method, d, seed) triple exactly once, sorted by method name, d and
/// seed. Method failures become error rows.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate().map_err(|(key, msg)| crate::Error::Config { line: 0, field: key.into(), msg })?;
    let cells: Vec<(usize, usize)> = cfg.d_grid.iter().flat_map(|&d| (0..cfg.seeds).map(move |s| (d, s))).collect();
    let work = || -> Vec<RunRecord> { cells.par_iter().flat_map_iter(|&(d, s)| run_cell(cfg, d, s)).collect() };
    let mut records = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    };
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(records)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per (method, d) aggregate over seeds; error rows are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub d: usize,
    pub runs: usize,
    pub errors: usize,
    pub median_robust_acc: Option<f64>,
    pub median_train_acc: Option<f64>,
    /// Share of successful runs that interpolate.
    pub interpolating_share: Option<f64>,
}

pub fn summarize(records: &[RunRecord], method: Method, d: usize) -> CellSummary {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == method && r.d == d).collect();
    let ok: Vec<_> = rows.iter().filter_map(|r| r.metrics()).collect();
    CellSummary {
        method,
        d,
        runs: rows.len(),
        errors: rows.len() - ok.len(),
        median_robust_acc: median(ok.iter().map(|m| m.robust_acc).collect()),
        median_train_acc: median(ok.iter().map(|m| m.train_acc).collect()),
        interpolating_share: (!ok.is_empty())
            .then(|| ok.iter().filter(|m| m.interpolating).count() as f64 / ok.len() as f64),
    }
}
