//! Hard-margin homogeneous classifier, solved in the dual over the Gram
//! matrix: `max Σλ − ½ λᵀ(ZZᵀ)λ`, `λ ≥ 0`, with `w = Zᵀλ`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LabeledDataset, LinearModel};
use crate::qp::{solve_nnqp, NnqpOptions, NnqpOutcome};

#[derive(Debug, Clone)]
pub struct MaxMarginOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    pub max_sweeps: usize,
    /// A convex combination of signed rows shorter than this fraction of the
    /// longest row certifies non-separability.
    pub separation_floor: f64,
}

impl Default for MaxMarginOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_sweeps: 50_000, separation_floor: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxMarginSolution {
    pub model: LinearModel,
    pub dual: Vec<f64>,
    /// (primal − dual) / primal.
    pub duality_gap: f64,
    /// min_i y_i <w, x_i> of the returned w.
    pub min_margin: f64,
    pub sweeps: usize,
}

pub fn max_margin(data: &LabeledDataset, tol: f64) -> Result<LinearModel> {
    Ok(max_margin_detailed(data, &MaxMarginOptions { tol, ..Default::default() })?.model)
}

pub fn max_margin_detailed(data: &LabeledDataset, opts: &MaxMarginOptions) -> Result<MaxMarginSolution> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let z = data.signed();
    let gram = z.tr_mul(&z);
    let ones = DVector::from_element(data.n(), 1.0);
    let qp_opts = NnqpOptions { tol: opts.tol * 1e-2, max_sweeps: opts.max_sweeps, ..Default::default() };
    let sol = match solve_nnqp(&gram, &ones, &qp_opts)? {
        NnqpOutcome::Solved(sol) => sol,
        NnqpOutcome::Unbounded(lambda) => return Err(non_separable(data, &z, &lambda)),
        NnqpOutcome::Exhausted(lambda, _) => {
            let longest = gram.diagonal().max().sqrt();
            let p = &lambda / lambda.sum().max(f64::MIN_POSITIVE);
            let residual = (&z * &p).norm();
            if residual <= opts.separation_floor * longest {
                return Err(non_separable(data, &z, &lambda));
            }
            return Err(Error::NotConverged { what: "max-margin dual", iters: opts.max_sweeps, residual });
        }
    };
    let mut w = &z * &sol.lambda;
    let margins = z.tr_mul(&w);
    let min_margin = margins.min();
    if !(min_margin > 0.0) {
        return Err(non_separable(data, &z, &sol.lambda));
    }
    // exact feasibility: scale so the smallest margin is at least 1
    w *= (1.0 + 4.0 * f64::EPSILON) / min_margin;
    let min_margin = z.tr_mul(&w).min();
    let primal = 0.5 * w.norm_squared();
    let dual = sol.lambda.sum() - 0.5 * sol.lambda.dot(&(&gram * &sol.lambda));
    let duality_gap = (primal - dual) / primal;
    if duality_gap > opts.tol {
        return Err(Error::NotConverged { what: "max-margin dual", iters: sol.sweeps, residual: duality_gap });
    }
    Ok(MaxMarginSolution {
        model: LinearModel::new(w)?,
        dual: sol.lambda.as_slice().to_vec(),
        duality_gap,
        min_margin,
        sweeps: sol.sweeps,
    })
}

fn non_separable(data: &LabeledDataset, z: &nalgebra::DMatrix<f64>, lambda: &DVector<f64>) -> Error {
    let total = lambda.sum().max(f64::MIN_POSITIVE);
    let p = lambda / total;
    let residual = (z * &p).norm();
    let margins = data.margins(&(z * lambda));
    let worst_row = margins.imin();
    Error::NonSeparable { residual, worst_row, violation: 1.0 - margins[worst_row] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::mean_estimator;
    use crate::model::{normalized_margin, ProblemInstance, Vector};

    #[test]
    fn symmetric_pair() {
        let data = LabeledDataset::from_rows(
            &[Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![-1.0, 0.0])],
            vec![1, -1],
            vec![1, 2],
        )
        .unwrap();
        let sol = max_margin_detailed(&data, &MaxMarginOptions::default()).unwrap();
        assert!((sol.model.w() - Vector::from_vec(vec![1.0, 0.0])).amax() < 1e-12);
        assert!(sol.min_margin >= 1.0 && sol.min_margin <= 1.0 + 1e-9);
    }

    /// Best feasible candidate from every single and pair of active constraints.
    fn support_search(data: &LabeledDataset) -> Option<Vector> {
        let z = data.signed();
        let n = data.n();
        let mut cands = Vec::new();
        for i in 0..n {
            let zi = z.column(i).into_owned();
            cands.push(&zi / zi.norm_squared());
            for j in i + 1..n {
                let zj = z.column(j);
                let a = nalgebra::Matrix2::new(zi[0], zi[1], zj[0], zj[1]);
                if let Some(inv) = a.try_inverse() {
                    let w = inv * nalgebra::Vector2::new(1.0, 1.0);
                    cands.push(Vector::from_vec(vec![w[0], w[1]]));
                }
            }
        }
        cands
            .into_iter()
            .filter(|w| z.tr_mul(w).min() >= 1.0 - 1e-12)
            .min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
    }

    #[test]
    fn matches_support_search_in_the_plane() {
        let mut found = 0;
        for seed in 0..200 {
            let n = 2 + (seed as usize % 5);
            let inst = ProblemInstance::sample(2, (1.0, 0.5), (1.0, 0.0), (n / 2 + 1, n - n / 2), 0.4, seed).unwrap();
            let data = inst.sample_default().unwrap();
            match (support_search(&data), max_margin_detailed(&data, &MaxMarginOptions::default())) {
                (Some(w), Ok(sol)) => {
                    assert!((sol.model.w() - w).amax() < 1e-6, "seed {seed}");
                    found += 1;
                }
                (None, Err(Error::NonSeparable { .. })) => {}
                (a, b) => panic!("seed {seed}: oracle {a:?} solver {b:?}"),
            }
        }
        assert!(found > 50);
    }

    #[test]
    fn non_separable_is_an_error() {
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let data = LabeledDataset::from_rows(&[x.clone(), x], vec![1, -1], vec![1, 2]).unwrap();
        match max_margin(&data, 1e-9) {
            Err(Error::NonSeparable { residual, .. }) => assert!(residual < 1e-3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn beats_the_mean_estimator() {
        for seed in 0..100 {
            let inst = ProblemInstance::sample(60, (1.0, 2.0), (1.0, 0.0), (12, 8), 0.3, seed).unwrap();
            let data = inst.sample_default().unwrap();
            let sol = max_margin_detailed(&data, &MaxMarginOptions::default()).unwrap();
            assert!(sol.duality_gap <= 1e-9);
            let mm = normalized_margin(&sol.model, &data, 0.3).unwrap();
            let mean = normalized_margin(&mean_estimator(&data).unwrap(), &data, 0.3).unwrap();
            assert!(mm >= mean - 1e-12, "seed {seed}: {mm} < {mean}");
        }
    }
}
