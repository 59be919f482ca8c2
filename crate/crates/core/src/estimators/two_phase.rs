//! Two-phase invariant learner: per-environment signed means on one half of
//! each environment, then a two-dimensional combination `v_1 w_1 + v_2 w_2`
//! chosen on the other half under an equal-opportunity constraint.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::gd::{gd_train, PenaltyKind, TrainConfig};
use crate::estimators::mean::mean_estimator;
use crate::model::{LabeledDataset, LinearModel, Vector};
use crate::rng::Rng;

/// How the per-environment positive score T̂_e is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EoppForm {
    /// Mean over the positive rows of the fine-tune half.
    PositiveMean,
    /// Sum over those rows times 4/N_e, N_e the full environment size.
    QuarterSample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageTwo {
    /// Exact solution of the linear EOpp constraint.
    Eopp(EoppForm),
    /// Logistic regression with a VREx penalty on the 2-D features.
    Vrex(TrainConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseConfig {
    /// Share of each environment used for the stage-1 means.
    pub split_fraction: f64,
    pub stage_two: StageTwo,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self { split_fraction: 0.5, stage_two: StageTwo::Eopp(EoppForm::PositiveMean) }
    }
}

impl TwoPhaseConfig {
    pub fn vrex(penalty_weight: f64) -> Self {
        Self {
            split_fraction: 0.5,
            stage_two: StageTwo::Vrex(TrainConfig {
                penalty_kind: PenaltyKind::Vrex,
                penalty_weight,
                max_iters: 5_000,
                ..Default::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Pos,
    Neg,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPhaseDiagnostics {
    pub w_1: Vec<f64>,
    pub w_2: Vec<f64>,
    pub constraint_coeffs: (f64, f64),
    pub v_pos: (f64, f64),
    pub v_neg: (f64, f64),
    pub chosen: Choice,
    pub scores: (f64, f64),
    pub split_seed: u64,
}

impl TwoPhaseDiagnostics {
    pub fn v_star(&self) -> (f64, f64) {
        match self.chosen {
            Choice::Pos => self.v_pos,
            Choice::Neg => self.v_neg,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

pub fn two_phase_learn(s1: &LabeledDataset, s2: &LabeledDataset, rng: &mut Rng) -> Result<(LinearModel, TwoPhaseDiagnostics)> {
    two_phase_learn_with(s1, s2, rng, &TwoPhaseConfig::default())
}

fn split(data: &LabeledDataset, fraction: f64, rng: &mut Rng) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = data.n();
    let n_train = (n as f64 * fraction).floor() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows at fraction {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok((data.subset(&idx[..n_train]), data.subset(&idx[n_train..])))
}

/// Positive-row score of `w` in one fine-tune half.
fn positive_score(w: &Vector, fine: &LabeledDataset, env: u8, full_size: usize, form: EoppForm) -> Result<f64> {
    let scores = fine.xt().tr_mul(w);
    let (sum, count) = scores
        .iter()
        .zip(fine.labels())
        .filter(|(_, &y)| y == 1)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        return Err(Error::NoPositives(env));
    }
    Ok(match form {
        EoppForm::PositiveMean => sum / count as f64,
        EoppForm::QuarterSample => 4.0 * sum / full_size as f64,
    })
}

pub fn two_phase_learn_with(
    s1: &LabeledDataset,
    s2: &LabeledDataset,
    rng: &mut Rng,
    config: &TwoPhaseConfig,
) -> Result<(LinearModel, TwoPhaseDiagnostics)> {
    if !(config.split_fraction > 0.0 && config.split_fraction < 1.0) {
        return Err(Error::InvalidArgument("split_fraction must lie in (0, 1)".into()));
    }
    let split_seed = rng.next_u64();
    let mut split_rng = Rng::seed_from_u64(split_seed);
    let (train_1, fine_1) = split(s1, config.split_fraction, &mut split_rng)?;
    let (train_2, fine_2) = split(s2, config.split_fraction, &mut split_rng)?;
    let w_1 = mean_estimator(&train_1)?.w();
    let w_2 = mean_estimator(&train_2)?.w();

    let form = match &config.stage_two {
        StageTwo::Eopp(form) => *form,
        StageTwo::Vrex(_) => EoppForm::PositiveMean,
    };
    let gap = |w: &Vector| -> Result<f64> {
        Ok(positive_score(w, &fine_1, 1, s1.n(), form)? - positive_score(w, &fine_2, 2, s2.n(), form)?)
    };
    let (a1, a2) = (gap(&w_1)?, gap(&w_2)?);

    let fine = fine_1.concat(&fine_2)?;
    let signed_sum = fine.signed().column_sum();
    let (t1, t2) = (w_1.dot(&signed_sum), w_2.dot(&signed_sum));
    let score = |v: (f64, f64)| v.0 * t1 + v.1 * t2;

    let v_pos = match &config.stage_two {
        StageTwo::Eopp(_) => {
            let scale = a1.abs().max(a2.abs());
            if scale < 1e-15 {
                return Err(Error::DegenerateConstraint { a1, a2 });
            }
            (-a2 / scale, a1 / scale)
        }
        StageTwo::Vrex(train) => {
            let xt2 = nalgebra::DMatrix::from_fn(2, fine.n(), |r, i| {
                let col = fine.xt().column(i);
                if r == 0 { w_1.dot(&col) } else { w_2.dot(&col) }
            });
            let reduced = LabeledDataset::new(xt2, fine.labels().to_vec(), fine.envs().to_vec())?;
            let (m, _) = gd_train(&reduced, train)?;
            let v = m.w();
            let scale = v.amax();
            (v[0] / scale, v[1] / scale)
        }
    };
    let v_neg = (-v_pos.0, -v_pos.1);
    let scores = (score(v_pos), score(v_neg));
    let chosen = if scores.0 > scores.1 || (scores.0 == scores.1 && v_pos.0 + v_pos.1 >= 0.0) {
        Choice::Pos
    } else {
        Choice::Neg
    };
    let diag = TwoPhaseDiagnostics {
        w_1: w_1.as_slice().to_vec(),
        w_2: w_2.as_slice().to_vec(),
        constraint_coeffs: (a1, a2),
        v_pos,
        v_neg,
        chosen,
        scores,
        split_seed,
    };
    let (v1, v2) = diag.v_star();
    Ok((LinearModel::new(&w_1 * v1 + &w_2 * v2)?, diag))
}
