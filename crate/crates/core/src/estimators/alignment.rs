//! How close penalized logistic training lands to the hard-margin solution
//! on separable data.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::estimators::gd::{gd_train, gd_train_from, PenaltyKind, TrainConfig};
use crate::estimators::max_margin::max_margin;
use crate::model::{ProblemInstance, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    /// IRMv1 penalty weight λ_1.
    pub irm_weight: f64,
    /// Ridge weights λ_2, applied in order with warm starts.
    pub l2_schedule: Vec<f64>,
    pub iters_per_stage: usize,
    /// Iterations for the unregularized runs.
    pub unregularized_iters: usize,
    pub learning_rate: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            irm_weight: 1.0,
            l2_schedule: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            iters_per_stage: 20_000,
            unregularized_iters: 100_000,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub d: usize,
    pub seed: u64,
    /// IRMv1 with the decaying ridge schedule.
    pub cos_irm_l2_decay: f64,
    /// IRMv1 with no ridge term.
    pub cos_irm_unregularized: f64,
    /// Plain logistic regression with no ridge term.
    pub cos_erm_unregularized: f64,
}

fn one(inst: &ProblemInstance, config: &AlignmentConfig) -> Result<AlignmentRow> {
    let data = inst.sample_default()?;
    let target = max_margin(&data, 1e-9)?;
    let base = TrainConfig {
        learning_rate: config.learning_rate,
        penalty_kind: PenaltyKind::Irmv1,
        penalty_weight: config.irm_weight,
        tolerance: 1e-12,
        log_every: usize::MAX,
        ..Default::default()
    };
    let mut w = Vector::zeros(data.d());
    for &l2 in &config.l2_schedule {
        let stage = TrainConfig { l2_weight: l2, max_iters: config.iters_per_stage, ..base.clone() };
        w = gd_train_from(&data, &stage, &w)?.0.w();
    }
    let decayed = crate::model::LinearModel::new(w)?;
    let free = TrainConfig { max_iters: config.unregularized_iters, ..base.clone() };
    let (irm, _) = gd_train(&data, &free)?;
    let (erm, _) = gd_train(&data, &TrainConfig { penalty_kind: PenaltyKind::None, penalty_weight: 0.0, ..free })?;
    Ok(AlignmentRow {
        d: inst.d(),
        seed: inst.seed,
        cos_irm_l2_decay: decayed.cosine(&target),
        cos_irm_unregularized: irm.cosine(&target),
        cos_erm_unregularized: erm.cosine(&target),
    })
}

/// One row per instance, in input order.
pub fn irm_margin_alignment(instances: &[ProblemInstance], config: &AlignmentConfig) -> Result<Vec<AlignmentRow>> {
    instances.par_iter().map(|inst| one(inst, config)).collect()
}
