//! Bound-chain study: on random instances whose concentration events hold,
//! compare the closed-form bound, the Lagrangian at the canonical dual
//! point and the solved program.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::model::ProblemInstance;
use crate::rng;
use crate::verifier::events::{check_spectral_events, EventReport};
use crate::verifier::program::{canonical_alpha, closed_form_bound, dual_value, min_weighted_beta, GramData};

#[derive(Debug, Clone, Serialize)]
pub struct ChainConfig {
    /// Passing instances wanted.
    pub instances: usize,
    /// Draws attempted before giving up on reaching `instances`.
    pub max_attempts: usize,
    pub n_range: (usize, usize),
    /// `d = d_factor · N`.
    pub d_factor: usize,
    pub t: f64,
    pub theta_2: f64,
    /// `r² = c/N` with `c` uniform in this range, for both means.
    pub norm_range: (f64, f64),
    /// `γ` as a fraction of the largest achievable margin, uniform in this range.
    pub gamma_range: (f64, f64),
    pub seed: u64,
    pub solver_tol: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_attempts: 400,
            n_range: (10, 60),
            d_factor: 20,
            t: 3.0,
            theta_2: 0.0,
            norm_range: (0.001, 0.05),
            gamma_range: (0.1, 0.9),
            seed: 0,
            solver_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRecord {
    pub attempt: usize,
    pub n_1: usize,
    pub n_2: usize,
    pub d: usize,
    pub gamma: f64,
    pub theta_2: f64,
    pub r_c: f64,
    pub r_s: f64,
    pub events: EventReport,
    pub primal: f64,
    pub primal_dual_gap: f64,
    pub alpha: f64,
    pub canonical_dual: f64,
    pub closed_form: f64,
    /// `canonical_dual ≤ primal + 1e-6`.
    pub weak_duality: bool,
    /// `closed_form ≤ canonical_dual + 1e-9`.
    pub closed_form_below: bool,
}

impl ChainRecord {
    pub fn chain_holds(&self) -> bool {
        self.weak_duality && self.closed_form_below
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainStudy {
    pub config: ChainConfig,
    pub attempts: usize,
    /// Attempts rejected because an event failed.
    pub rejected: usize,
    pub records: Vec<ChainRecord>,
    /// Per-attempt failures other than event rejections.
    pub errors: Vec<(usize, String)>,
}

impl ChainStudy {
    pub fn all_hold(&self) -> bool {
        self.records.len() >= self.config.instances && self.errors.is_empty() && self.records.iter().all(ChainRecord::chain_holds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }
}

enum Attempt {
    Rejected,
    Record(Box<ChainRecord>),
    Failed(String),
}

fn attempt(cfg: &ChainConfig, k: usize) -> Result<Attempt> {
    let mut r = rng::stream(cfg.seed, &[rng::purpose::METHOD, 0xC4A1, k as u64]);
    let n = r.gen_range(cfg.n_range.0..=cfg.n_range.1).max(2);
    let n_1 = r.gen_range(1..n);
    let n_2 = n - n_1;
    let d = cfg.d_factor * n;
    let nf = n as f64;
    let rc2 = r.gen_range(cfg.norm_range.0..=cfg.norm_range.1) / nf;
    let rs2 = r.gen_range(cfg.norm_range.0..=cfg.norm_range.1) / nf;
    let frac = r.gen_range(cfg.gamma_range.0..=cfg.gamma_range.1);
    let seed = r.gen::<u64>();
    let inst = ProblemInstance::sample(d, (rc2.sqrt(), rs2.sqrt()), (1.0, cfg.theta_2), (n_1, n_2), 1.0 / (d as f64).sqrt(), seed)?;
    let data = inst.sample_default()?;
    let events = check_spectral_events(&inst, &data, cfg.t)?;
    if !events.passes() {
        return Ok(Attempt::Rejected);
    }
    let mut gd = GramData::normalized(&data, inst.sigma, 0.0, cfg.theta_2)?;
    gd.gamma = frac * gd.max_margin()?;
    let sol = min_weighted_beta(&gd, cfg.solver_tol)?;
    let (r_c, r_s) = (inst.r_c(), inst.r_s());
    let alpha = canonical_alpha(n_1, r_c, r_s);
    let canonical_dual = dual_value(&gd, &(&gd.e1 * alpha))?;
    let closed_form = closed_form_bound(n_1, n_2, gd.gamma, cfg.theta_2, r_c, d, cfg.t);
    Ok(Attempt::Record(Box::new(ChainRecord {
        attempt: k,
        n_1,
        n_2,
        d,
        gamma: gd.gamma,
        theta_2: cfg.theta_2,
        r_c,
        r_s,
        events,
        primal: sol.optimum,
        primal_dual_gap: sol.optimum - sol.dual_bound,
        alpha,
        canonical_dual,
        closed_form,
        weak_duality: canonical_dual <= sol.optimum + 1e-6,
        closed_form_below: closed_form <= canonical_dual + 1e-9,
    })))
}

pub fn bound_chain_study(cfg: &ChainConfig) -> ChainStudy {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut rejected = 0;
    let mut next = 0;
    // draw in rounds so the outcome only depends on attempt indices
    while records.len() < cfg.instances && next < cfg.max_attempts {
        let want = cfg.instances - records.len();
        let end = (next + want + want / 4 + 1).min(cfg.max_attempts);
        let outcomes: Vec<(usize, Attempt)> = (next..end)
            .into_par_iter()
            .map(|k| (k, attempt(cfg, k).unwrap_or_else(|e| Attempt::Failed(e.to_string()))))
            .collect();
        next = end;
        for (k, outcome) in outcomes {
            if records.len() >= cfg.instances {
                break;
            }
            match outcome {
                Attempt::Rejected => rejected += 1,
                Attempt::Record(r) => records.push(*r),
                Attempt::Failed(msg) => errors.push((k, msg)),
            }
        }
    }
    let attempts = rejected + records.len() + errors.len();
    ChainStudy { config: cfg.clone(), attempts, rejected, records, errors }
}
