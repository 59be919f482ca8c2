//! Full-batch gradient descent on the logistic loss with an optional
//! environment penalty and ridge term.
//!
//! With margins `m_i = y_i <w, x_i>` the objective is
//! `mean ℓ(m_i) + λ·P(w) + l2·||w||²`, `ℓ(m) = log(1 + e^{-m})`. Every
//! gradient is assembled as `Z c + 2·l2·w` for a per-row coefficient vector
//! `c`, so one pass over the samples serves the loss and all penalties.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledDataset, LinearModel, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Irmv1,
    Vrex,
    GroupDro,
    MomentMatch,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 5] =
        [PenaltyKind::None, PenaltyKind::Irmv1, PenaltyKind::Vrex, PenaltyKind::GroupDro, PenaltyKind::MomentMatch];

    pub fn per_environment(self) -> bool {
        self != PenaltyKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub penalty_kind: PenaltyKind,
    pub penalty_weight: f64,
    pub l2_weight: f64,
    /// Stop once the gradient norm is at most this.
    pub tolerance: f64,
    /// Iteration at which the penalty switches on; before it λ is 0.
    pub anneal_iters: Option<usize>,
    /// Halve the step whenever the objective would increase.
    pub backtracking: bool,
    /// Trace row spacing; the first and last iterations are always logged.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 10_000,
            penalty_kind: PenaltyKind::None,
            penalty_weight: 0.0,
            l2_weight: 0.0,
            tolerance: 1e-8,
            anneal_iters: None,
            backtracking: true,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.penalty_weight >= 0.0 && self.l2_weight >= 0.0) {
            return Err(Error::InvalidArgument("penalty weights must be nonnegative".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

fn loss(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

fn dloss(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + m.exp())
    }
}

fn d2loss(m: f64) -> f64 {
    let s = -dloss(m);
    s * (1.0 - s)
}

/// The training objective on a fixed dataset.
pub struct Objective {
    z: DMatrix<f64>,
    groups: [Vec<usize>; 2],
    kind: PenaltyKind,
    l2: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub penalty: f64,
    pub total: f64,
    pub grad: Vector,
    pub margins: Vector,
}

pub fn objective(data: &LabeledDataset, kind: PenaltyKind, l2: f64) -> Result<Objective> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let groups = [data.env_rows(1), data.env_rows(2)];
    if kind.per_environment() {
        for (g, e) in groups.iter().zip([1u8, 2]) {
            if g.is_empty() {
                return Err(Error::MissingEnvironment(e));
            }
        }
    }
    Ok(Objective { z: data.signed(), groups, kind, l2 })
}

impl Objective {
    pub fn d(&self) -> usize {
        self.z.nrows()
    }

    /// Penalty value alone at `w`.
    pub fn penalty(&self, w: &Vector) -> f64 {
        self.evaluate(w, 1.0).penalty
    }

    pub fn evaluate(&self, w: &Vector, lambda: f64) -> Evaluation {
        let m = self.z.tr_mul(w);
        let n = m.len() as f64;
        let mut c = DVector::from_fn(m.len(), |i, _| dloss(m[i]) / n);
        let loss_value = m.iter().map(|&v| loss(v)).sum::<f64>() / n;
        let base = c.clone();
        let penalty = self.penalty_terms(&m, lambda, &mut c);
        let mut grad = &self.z * c;
        if self.l2 > 0.0 {
            grad.axpy(2.0 * self.l2, w, 1.0);
        }
        if let Some(g2) = self.dro_tie_gradient(&m, lambda, base, w) {
            // at equal risks the max has a kink: take the shortest subgradient,
            // which is a descent direction whenever it is nonzero
            let diff = &grad - &g2;
            let dd = diff.norm_squared();
            let t = if dd > 0.0 { (-g2.dot(&diff) / dd).clamp(0.0, 1.0) } else { 1.0 };
            grad = &grad * t + &g2 * (1.0 - t);
        }
        let total = loss_value + lambda * penalty + self.l2 * w.norm_squared();
        Evaluation { loss: loss_value, penalty, total, grad, margins: m }
    }

    /// GroupDRO gradient with environment 2 as the worst group, when the two
    /// risks tie; `penalty_terms` picks environment 1 in that case.
    fn dro_tie_gradient(&self, m: &Vector, lambda: f64, mut c: Vector, w: &Vector) -> Option<Vector> {
        let [g1, g2] = &self.groups;
        if self.kind != PenaltyKind::GroupDro || lambda == 0.0 {
            return None;
        }
        let risk = |g: &[usize]| g.iter().map(|&i| loss(m[i])).sum::<f64>() / g.len() as f64;
        let (r1, r2) = (risk(g1), risk(g2));
        if (r1 - r2).abs() > 1e-12 * r1.max(r2) {
            return None;
        }
        let k = lambda / g2.len() as f64;
        for &i in g2 {
            c[i] += k * dloss(m[i]);
        }
        let mut grad = &self.z * c;
        if self.l2 > 0.0 {
            grad.axpy(2.0 * self.l2, w, 1.0);
        }
        Some(grad)
    }

    /// Returns the penalty value and adds `λ·dP/dm_i` into `c`.
    fn penalty_terms(&self, m: &Vector, lambda: f64, c: &mut Vector) -> f64 {
        let mean_over = |g: &[usize], f: &dyn Fn(f64) -> f64| g.iter().map(|&i| f(m[i])).sum::<f64>() / g.len() as f64;
        let [g1, g2] = &self.groups;
        match self.kind {
            PenaltyKind::None => 0.0,
            PenaltyKind::Irmv1 => {
                let mut total = 0.0;
                for g in [g1, g2] {
                    if g.is_empty() {
                        continue;
                    }
                    let ge = mean_over(g, &|v| v * dloss(v));
                    total += ge * ge;
                    let k = lambda * 2.0 * ge / g.len() as f64;
                    for &i in g {
                        c[i] += k * (dloss(m[i]) + m[i] * d2loss(m[i]));
                    }
                }
                total
            }
            PenaltyKind::Vrex => {
                let r1 = mean_over(g1, &loss);
                let r2 = mean_over(g2, &loss);
                let half = 0.5 * (r1 - r2);
                for (g, sign) in [(g1, 1.0), (g2, -1.0)] {
                    let k = lambda * half * sign / g.len() as f64;
                    for &i in g {
                        c[i] += k * dloss(m[i]);
                    }
                }
                half * half
            }
            PenaltyKind::GroupDro => {
                let r1 = mean_over(g1, &loss);
                let r2 = mean_over(g2, &loss);
                let (g, worst) = if r1 >= r2 { (g1, r1) } else { (g2, r2) };
                let k = lambda / g.len() as f64;
                for &i in g {
                    c[i] += k * dloss(m[i]);
                }
                worst
            }
            PenaltyKind::MomentMatch => {
                let a1 = mean_over(g1, &|v| v);
                let a2 = mean_over(g2, &|v| v);
                let s1 = mean_over(g1, &|v| (v - a1) * (v - a1));
                let s2 = mean_over(g2, &|v| (v - a2) * (v - a2));
                let (da, ds) = (a1 - a2, s1 - s2);
                for (g, a, sign) in [(g1, a1, 1.0), (g2, a2, -1.0)] {
                    let n = g.len() as f64;
                    for &i in g {
                        c[i] += lambda * sign * (2.0 * da + 4.0 * ds * (m[i] - a)) / n;
                    }
                }
                da * da + ds * ds
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub penalty: f64,
    pub objective: f64,
    pub train_err: f64,
    /// min_i y_i <w, x_i> / ||w||; zero while w = 0.
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

impl Trace {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "iter,loss,penalty,train_err,margin")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.iter, r.loss, r.penalty, r.train_err, r.margin)?;
        }
        Ok(())
    }
}

fn trace_row(iter: usize, ev: &Evaluation, w: &Vector) -> TraceRow {
    let n = ev.margins.len() as f64;
    let norm = w.norm();
    TraceRow {
        iter,
        loss: ev.loss,
        penalty: ev.penalty,
        objective: ev.total,
        train_err: ev.margins.iter().filter(|&&v| v <= 0.0).count() as f64 / n,
        margin: if norm > 0.0 { ev.margins.min() / norm } else { 0.0 },
    }
}

/// Gradient descent from w = 0.
pub fn gd_train(data: &LabeledDataset, config: &TrainConfig) -> Result<(LinearModel, Trace)> {
    gd_train_from(data, config, &Vector::zeros(data.d()))
}

/// Gradient descent from a given start, used for warm-started schedules.
pub fn gd_train_from(data: &LabeledDataset, config: &TrainConfig, start: &Vector) -> Result<(LinearModel, Trace)> {
    config.validate()?;
    let obj = objective(data, config.penalty_kind, config.l2_weight)?;
    let weight_at = |it: usize| match config.anneal_iters {
        Some(a) if it < a => 0.0,
        _ => config.penalty_weight,
    };
    let mut w = start.clone();
    let mut lr = config.learning_rate;
    let mut lambda = weight_at(0);
    let mut ev = obj.evaluate(&w, lambda);
    if !ev.total.is_finite() {
        return Err(Error::NonFinite { iter: 0 });
    }
    let mut trace = Trace { rows: vec![trace_row(0, &ev, &w)], ..Default::default() };
    let log_every = config.log_every.max(1);
    let mut it = 0;
    while it < config.max_iters {
        let next_lambda = weight_at(it);
        if next_lambda != lambda {
            lambda = next_lambda;
            ev = obj.evaluate(&w, lambda);
        }
        if ev.grad.norm() <= config.tolerance {
            trace.converged = true;
            break;
        }
        it += 1;
        let mut step = lr;
        loop {
            let cand = &w - &ev.grad * step;
            let cand_ev = obj.evaluate(&cand, lambda);
            if !config.backtracking {
                if !cand_ev.total.is_finite() {
                    return Err(Error::NonFinite { iter: it });
                }
                w = cand;
                ev = cand_ev;
                break;
            }
            if cand_ev.total <= ev.total {
                w = cand;
                ev = cand_ev;
                lr = step;
                break;
            }
            step *= 0.5;
            if step < config.learning_rate * 1e-15 {
                // no descent left at machine precision
                trace.converged = true;
                break;
            }
        }
        if it % log_every == 0 {
            trace.rows.push(trace_row(it, &ev, &w));
        }
        if trace.converged {
            break;
        }
    }
    if trace.rows.last().map(|r| r.iter) != Some(it) {
        trace.rows.push(trace_row(it, &ev, &w));
    }
    trace.iterations = it;
    trace.final_grad_norm = ev.grad.norm();
    Ok((LinearModel::new(w)?, trace))
}
