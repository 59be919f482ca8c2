//! The margin-constrained program over span coefficients
//!
//! ```text
//! min  uᵀβ   s.t.  Gβ ≥ γ1,  βᵀGβ ≤ 1,      u = e_1 + θ_2 e_2,  G = ZZᵀ
//! ```
//!
//! solved entirely in the N-dimensional coefficient space. For a fixed
//! multiplier ν > 0 on the ball, the best margin multipliers solve the
//! nonnegative QP `min ½λᵀGλ − (u + νγ1)ᵀλ`, and `β(ν) = (λ − G⁻¹u)/ν`. The
//! ball residual `β(ν)ᵀGβ(ν) − 1` is decreasing in ν, so ν is found by
//! bisection. Every λ visited is also scored with the Lagrangian lower bound
//! `L(λ) = γ1ᵀλ − ‖u − Gλ‖_{G⁻¹}`, which certifies the returned primal value.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LabeledDataset;
use crate::qp::{solve_nnqp, NnqpOptions, NnqpOutcome};

/// Smallest Gram eigenvalue accepted before inverting it.
pub const MIN_EIGENVALUE: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct GramData {
    /// d×N, column i is `z_i = y_i x_i`.
    pub z: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub gamma: f64,
    pub theta_2: f64,
}

impl GramData {
    pub fn new(data: &LabeledDataset, gamma: f64, theta_2: f64) -> Result<Self> {
        Self::scaled(data, 1.0, gamma, theta_2)
    }

    /// Rescale samples by `1/(σ√d)` so the noise has unit total variance,
    /// the convention under which `γ` is a normalized margin.
    pub fn normalized(data: &LabeledDataset, sigma: f64, gamma: f64, theta_2: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Self::scaled(data, 1.0 / (sigma * (data.d() as f64).sqrt()), gamma, theta_2)
    }

    fn scaled(data: &LabeledDataset, scale: f64, gamma: f64, theta_2: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be a nonnegative number, got {gamma}")));
        }
        let mut z = data.signed();
        z *= scale;
        let mut gram = z.tr_mul(&z);
        // symmetrize away the product's rounding
        gram = (&gram + gram.transpose()) * 0.5;
        let e1 = DVector::from_iterator(data.n(), data.envs().iter().map(|&e| f64::from(u8::from(e == 1))));
        let e2 = DVector::from_iterator(data.n(), data.envs().iter().map(|&e| f64::from(u8::from(e == 2))));
        Ok(Self { z, gram, e1, e2, gamma, theta_2 })
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_1(&self) -> usize {
        self.e1.sum() as usize
    }

    pub fn n_2(&self) -> usize {
        self.e2.sum() as usize
    }

    /// `u = e_1 + θ_2 e_2`.
    pub fn weights(&self) -> DVector<f64> {
        &self.e1 + &self.e2 * self.theta_2
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.gram.clone()).eigenvalues.min()
    }

    /// Cholesky factor of the Gram matrix, refused below [`MIN_EIGENVALUE`].
    pub fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        let min_eig = self.min_eigenvalue();
        if !(min_eig >= MIN_EIGENVALUE) {
            return Err(Error::IllConditioned { min_eig, threshold: MIN_EIGENVALUE });
        }
        self.gram.clone().cholesky().ok_or(Error::IllConditioned { min_eig, threshold: MIN_EIGENVALUE })
    }

    /// Largest normalized margin any β can reach: `1/√(1ᵀλ)` for the hard
    /// margin dual λ.
    pub fn max_margin(&self) -> Result<f64> {
        let ones = DVector::from_element(self.n(), 1.0);
        let lambda = solve(&self.gram, &ones)?;
        Ok(1.0 / lambda.sum().sqrt())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaSolution {
    /// `uᵀβ` at the returned β.
    pub optimum: f64,
    /// Best Lagrangian lower bound found; `optimum − dual_bound` is the gap.
    pub dual_bound: f64,
    pub beta: Vec<f64>,
    /// Dual point attaining `dual_bound`.
    pub lambda: Vec<f64>,
    pub nu: f64,
    /// max(0, γ − min_i (Gβ)_i).
    pub margin_violation: f64,
    /// max(0, βᵀGβ − 1).
    pub norm_violation: f64,
}

fn solve(q: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let opts = NnqpOptions { tol: 1e-13, ..Default::default() };
    match solve_nnqp(q, b, &opts)? {
        NnqpOutcome::Solved(s) => Ok(s.lambda),
        NnqpOutcome::Unbounded(_) => Err(Error::InvalidArgument("gram matrix is not positive definite".into())),
        NnqpOutcome::Exhausted(_, residual) => {
            Err(Error::NotConverged { what: "margin multipliers", iters: opts.max_sweeps, residual })
        }
    }
}

fn lagrangian(gd: &GramData, chol: &Cholesky<f64, Dyn>, u: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let r = u - &gd.gram * lambda;
    let q = r.dot(&chol.solve(&r)).max(0.0);
    gd.gamma * lambda.sum() - q.sqrt()
}

/// `L(λ) = γ1ᵀλ − √((u − Gλ)ᵀG⁻¹(u − Gλ))`, a lower bound on the program for
/// every λ ≥ 0.
pub fn dual_value(gd: &GramData, lambda: &DVector<f64>) -> Result<f64> {
    if lambda.len() != gd.n() {
        return Err(Error::InvalidArgument(format!("lambda has {} entries, expected {}", lambda.len(), gd.n())));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let chol = gd.factor()?;
    Ok(lagrangian(gd, &chol, &gd.weights(), lambda))
}

/// `α = 1/(1 + N_1(r_c² + r_s²))`, the scale of the canonical dual point `αe_1`.
pub fn canonical_alpha(n_1: usize, r_c: f64, r_s: f64) -> f64 {
    1.0 / (1.0 + n_1 as f64 * (r_c * r_c + r_s * r_s))
}

struct Probe {
    lambda: DVector<f64>,
    beta: DVector<f64>,
    /// βᵀGβ − 1
    excess: f64,
}

fn probe(gd: &GramData, u: &DVector<f64>, w: &DVector<f64>, nu: f64) -> Result<Probe> {
    let b = u.add_scalar(nu * gd.gamma);
    let lambda = solve(&gd.gram, &b)?;
    let beta = (&lambda - w) / nu;
    let excess = beta.dot(&(&gd.gram * &beta)) - 1.0;
    Ok(Probe { lambda, beta, excess })
}

fn finish(gd: &GramData, u: &DVector<f64>, beta: DVector<f64>, lambda: DVector<f64>, dual_bound: f64, nu: f64) -> BetaSolution {
    let gb = &gd.gram * &beta;
    BetaSolution {
        optimum: u.dot(&beta),
        dual_bound,
        margin_violation: (gd.gamma - gb.min()).max(0.0),
        norm_violation: (beta.dot(&gb) - 1.0).max(0.0),
        beta: beta.as_slice().to_vec(),
        lambda: lambda.as_slice().to_vec(),
        nu,
    }
}

/// Minimize `uᵀβ` over coefficient vectors with margin at least `γ` and unit
/// norm ball; `tol` bounds the certified gap relative to `max(1, |optimum|)`.
pub fn min_weighted_beta(gd: &GramData, tol: f64) -> Result<BetaSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let chol = gd.factor()?;
    let max_margin = gd.max_margin()?;
    if gd.gamma > max_margin * (1.0 + 1e-12) {
        return Err(Error::Infeasible { gamma: gd.gamma, max_margin });
    }
    let n = gd.n();
    let u = gd.weights();
    let w = chol.solve(&u);

    // ball inactive: the margin constraints alone bound the objective
    if w.iter().all(|&v| v >= 0.0) {
        let beta = chol.solve(&DVector::from_element(n, gd.gamma));
        if beta.dot(&(&gd.gram * &beta)) <= 1.0 {
            let dual = lagrangian(gd, &chol, &u, &w);
            return Ok(finish(gd, &u, beta, w, dual, 0.0));
        }
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut upper = probe(gd, &u, &w, hi)?;
    let mut doublings = 0;
    while upper.excess > 0.0 {
        lo = hi;
        hi *= 2.0;
        upper = probe(gd, &u, &w, hi)?;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NotConverged { what: "ball multiplier bracket", iters: doublings, residual: upper.excess });
        }
    }
    let mut best_dual = lagrangian(gd, &chol, &u, &upper.lambda);
    let mut best_lambda = upper.lambda.clone();
    for iter in 0..500 {
        let primal = u.dot(&upper.beta);
        if primal - best_dual <= tol * primal.abs().max(1.0) {
            return Ok(finish(gd, &u, upper.beta, best_lambda, best_dual, hi));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::NotConverged { what: "ball multiplier bisection", iters: iter, residual: primal - best_dual });
        }
        let p = probe(gd, &u, &w, mid)?;
        let l = lagrangian(gd, &chol, &u, &p.lambda);
        if l > best_dual {
            best_dual = l;
            best_lambda = p.lambda.clone();
        }
        if p.excess > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            upper = p;
        }
    }
    let primal = u.dot(&upper.beta);
    Err(Error::NotConverged { what: "ball multiplier bisection", iters: 500, residual: primal - best_dual })
}

/// Closed-form lower bound on `uᵀβ` over margin-`γ` classifiers:
///
/// ½((N_1 + [θ_2]₊N_2)γ − √(2N_2)·N_1·r_c² − √(18N)(√N + t)/√d − √(8N_2)[−θ_2]₊)
pub fn closed_form_bound(n_1: usize, n_2: usize, gamma: f64, theta_2: f64, r_c: f64, d: usize, t: f64) -> f64 {
    let (n1, n2) = (n_1 as f64, n_2 as f64);
    let n = n1 + n2;
    let pos = theta_2.max(0.0);
    let neg = (-theta_2).max(0.0);
    0.5 * ((n1 + pos * n2) * gamma
        - (2.0 * n2).sqrt() * n1 * r_c * r_c
        - (18.0 * n).sqrt() * (n.sqrt() + t) / (d as f64).sqrt()
        - (8.0 * n2).sqrt() * neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProblemInstance, Vector};
    use proptest::prelude::*;

    fn axis_data(scales: &[f64], envs: Vec<u8>) -> LabeledDataset {
        let d = scales.len();
        let rows: Vec<Vector> = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut v = Vector::zeros(d);
                v[i] = s;
                v
            })
            .collect();
        LabeledDataset::from_rows(&rows, vec![1; d], envs).unwrap()
    }

    /// σ² = 1/d instance with small means so the Gram matrix is near identity.
    fn instance(n_1: usize, n_2: usize, d: usize, theta_2: f64, seed: u64) -> ProblemInstance {
        let n = (n_1 + n_2) as f64;
        ProblemInstance::sample(d, ((0.2 / n).sqrt(), (0.5 / n).sqrt()), (1.0, theta_2), (n_1, n_2), 1.0 / (d as f64).sqrt(), seed)
            .unwrap()
    }

    #[test]
    fn single_active_margin() {
        let data = axis_data(&[1.0], vec![1]);
        let gd = GramData::new(&data, 0.5, 0.0).unwrap();
        let sol = min_weighted_beta(&gd, 1e-10).unwrap();
        assert!((sol.optimum - 0.5).abs() < 1e-12);
        assert!((sol.beta[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_with_negative_weight_is_nonpositive() {
        let data = axis_data(&[1.0, 1.0, 1.0], vec![1, 2, 2]);
        let gd = GramData::new(&data, 0.0, -0.5).unwrap();
        let sol = min_weighted_beta(&gd, 1e-10).unwrap();
        assert!(sol.optimum <= 1e-12);
        // β_1 = 0 and the ball spent evenly on the two negative weights
        assert!((sol.optimum + 0.5 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn infeasible_margin_is_reported() {
        let data = axis_data(&[1.0, 1.0], vec![1, 2]);
        let gd = GramData::new(&data, 0.8, 0.0).unwrap();
        match min_weighted_beta(&gd, 1e-9) {
            Err(Error::Infeasible { max_margin, .. }) => assert!((max_margin - 0.5f64.sqrt()).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ill_conditioned_gram_is_reported() {
        let data = axis_data(&[1.0, 0.1], vec![1, 2]);
        let gd = GramData::new(&data, 0.1, 0.0).unwrap();
        assert!(matches!(min_weighted_beta(&gd, 1e-9), Err(Error::IllConditioned { .. })));
        assert!(matches!(dual_value(&gd, &DVector::zeros(2)), Err(Error::IllConditioned { .. })));
    }

    /// Enumerate every set of tight margin constraints, with the norm ball
    /// either tight (a quadratic in 1/ν) or loose (only at a vertex), and keep
    /// the best feasible candidate.
    fn active_set_oracle(gd: &GramData) -> f64 {
        let n = gd.n();
        let g = &gd.gram;
        let u = gd.weights();
        let ginv = g.clone().try_inverse().unwrap();
        let w = &ginv * &u;
        let feasible = |b: &DVector<f64>| {
            (g * b).min() >= gd.gamma - 1e-9 && b.dot(&(g * b)) <= 1.0 + 1e-9
        };
        let mut best = f64::INFINITY;
        let vertex = &ginv * DVector::from_element(n, gd.gamma);
        if feasible(&vertex) {
            best = u.dot(&vertex);
        }
        for mask in 0u32..(1 << n) {
            let act: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let mut a = DVector::zeros(n);
            let mut c = DVector::zeros(n);
            if !act.is_empty() {
                let sub = DMatrix::from_fn(act.len(), act.len(), |p, q| g[(act[p], act[q])]);
                let inv = sub.try_inverse().unwrap();
                let ua = DVector::from_fn(act.len(), |p, _| u[act[p]]);
                let la = &inv * ua;
                let ca = &inv * DVector::from_element(act.len(), gd.gamma);
                for (p, &i) in act.iter().enumerate() {
                    a[i] = la[p];
                    c[i] = ca[p];
                }
            }
            // β(s) = s (a − w) + c with s = 1/ν; solve β(s)ᵀGβ(s) = 1
            let p = &a - &w;
            let qa = p.dot(&(g * &p));
            let qb = 2.0 * p.dot(&(g * &c));
            let qc = c.dot(&(g * &c)) - 1.0;
            if qa <= 1e-300 {
                continue;
            }
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            for s in [(-qb + disc.sqrt()) / (2.0 * qa), (-qb - disc.sqrt()) / (2.0 * qa)] {
                if s > 0.0 {
                    let beta = &p * s + &c;
                    if feasible(&beta) {
                        best = best.min(u.dot(&beta));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn matches_active_set_enumeration() {
        let mut checked = 0;
        for seed in 0..40 {
            let theta_2 = [-0.7, 0.0, 0.4, 1.0][seed as usize % 4];
            let inst = instance(3, 3, 50, theta_2, seed);
            let data = inst.sample_default().unwrap();
            let mut gd = GramData::new(&data, 0.0, theta_2).unwrap();
            if gd.min_eigenvalue() < MIN_EIGENVALUE {
                continue;
            }
            gd.gamma = gd.max_margin().unwrap() * [0.0, 0.3, 0.7, 0.95][(seed as usize / 4) % 4];
            let sol = min_weighted_beta(&gd, 1e-9).unwrap();
            let oracle = active_set_oracle(&gd);
            assert!((sol.optimum - oracle).abs() <= 1e-5, "seed {seed}: solver {} oracle {oracle}", sol.optimum);
            assert!(sol.margin_violation <= 1e-9 && sol.norm_violation <= 1e-9);
            assert!(sol.optimum - sol.dual_bound <= 1e-9 * sol.optimum.abs().max(1.0));
            checked += 1;
        }
        assert!(checked >= 30);
    }

    #[test]
    fn dual_value_examples() {
        let data = axis_data(&[1.0, 2.0, 1.5], vec![1, 1, 2]);
        let gd = GramData::new(&data, 0.3, 0.5).unwrap();
        let u = gd.weights();
        // zero residual: G⁻¹u is nonnegative for a diagonal Gram matrix
        let lambda = gd.gram.clone().cholesky().unwrap().solve(&u);
        assert!((dual_value(&gd, &lambda).unwrap() - 0.3 * lambda.sum()).abs() < 1e-14);
        let at_zero = dual_value(&gd, &DVector::zeros(3)).unwrap();
        let expect = -(1.0 + 1.0 / 4.0 + 0.25 / 2.25f64).sqrt();
        assert!((at_zero - expect).abs() < 1e-14);
        assert!(dual_value(&gd, &DVector::from_vec(vec![1.0, -1.0, 0.0])).is_err());
    }

    #[test]
    fn closed_form_branches() {
        let with = closed_form_bound(10, 20, 0.1, 0.3, 0.05, 1000, 3.0);
        let without = closed_form_bound(10, 20, 0.1, 0.0, 0.05, 1000, 3.0);
        assert!((with - without - 0.5 * 0.3 * 20.0 * 0.1).abs() < 1e-12);
        let neg = closed_form_bound(10, 20, 0.1, -0.3, 0.05, 1000, 3.0);
        assert!((without - neg - 0.5 * 160f64.sqrt() * 0.3).abs() < 1e-12);
        let limit = closed_form_bound(10, 20, 0.1, 0.0, 0.0, usize::MAX, 3.0);
        assert!((limit - 0.5).abs() < 1e-6);
    }

    #[test]
    fn canonical_point_is_below_the_optimum() {
        let mut checked = 0;
        for seed in 0..100 {
            let inst = instance(12, 8, 600, 0.0, 100 + seed);
            let data = inst.sample_default().unwrap();
            let mut gd = GramData::new(&data, 0.0, 0.0).unwrap();
            if gd.min_eigenvalue() < MIN_EIGENVALUE {
                continue;
            }
            gd.gamma = 0.5 * gd.max_margin().unwrap();
            let sol = min_weighted_beta(&gd, 1e-10).unwrap();
            let alpha = canonical_alpha(12, inst.r_c(), inst.r_s());
            let l = dual_value(&gd, &(&gd.e1 * alpha)).unwrap();
            assert!(l <= sol.optimum + 1e-9, "seed {seed}: {l} > {}", sol.optimum);
            checked += 1;
        }
        assert!(checked >= 90);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn weak_duality(seed in 0u64..1_000_000, theta_2 in -1.0f64..1.0, frac in 0.0f64..0.95,
                        raw in proptest::collection::vec(0.0f64..2.0, 10)) {
            let inst = instance(6, 4, 200, theta_2, seed);
            let data = inst.sample_default().unwrap();
            let mut gd = GramData::new(&data, 0.0, theta_2).unwrap();
            prop_assume!(gd.min_eigenvalue() >= MIN_EIGENVALUE);
            gd.gamma = frac * gd.max_margin().unwrap();
            let sol = min_weighted_beta(&gd, 1e-10).unwrap();
            let lambda = DVector::from_vec(raw);
            prop_assert!(dual_value(&gd, &lambda).unwrap() <= sol.optimum + 1e-9);
            prop_assert!(sol.margin_violation <= 1e-9 && sol.norm_violation <= 1e-9);
        }
    }
}
