//! The two-environment Gaussian mixture and closed-form metrics of linear
//! classifiers on it.
//!
//! A sample from environment `e` is `x = y·mu_c + y·theta_e·mu_s + n` with
//! `y` uniform on {-1, +1} and `n ~ N(0, sigma² I)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::special::gaussian_tail;

pub type Vector = DVector<f64>;

/// One environment: shared means, noise level and its spurious coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub mu_c: Vector,
    pub mu_s: Vector,
    pub sigma: f64,
    pub theta: f64,
}

impl EnvironmentSpec {
    pub fn new(mu_c: Vector, mu_s: Vector, sigma: f64, theta: f64) -> Result<Self> {
        check_means(&mu_c, &mu_s)?;
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if !(-1.0..=1.0).contains(&theta) {
            return Err(Error::InvalidArgument(format!("theta {theta} outside [-1, 1]")));
        }
        Ok(Self { mu_c, mu_s, sigma, theta })
    }
}

fn check_means(mu_c: &Vector, mu_s: &Vector) -> Result<()> {
    if mu_c.len() != mu_s.len() {
        return Err(Error::InvalidArgument("mean dimensions differ".into()));
    }
    let (rc, rs) = (mu_c.norm(), mu_s.norm());
    if !(rc > 0.0 && rs > 0.0) {
        return Err(Error::InvalidArgument("means must be nonzero".into()));
    }
    if mu_c.dot(mu_s).abs() > 1e-9 * rc * rs {
        return Err(Error::InvalidArgument("mu_c and mu_s are not orthogonal".into()));
    }
    Ok(())
}

/// A sampled two-environment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub mu_c: Vector,
    pub mu_s: Vector,
    pub theta_1: f64,
    pub theta_2: f64,
    pub n_1: usize,
    pub n_2: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn new(
        mu_c: Vector,
        mu_s: Vector,
        (theta_1, theta_2): (f64, f64),
        (n_1, n_2): (usize, usize),
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        EnvironmentSpec::new(mu_c.clone(), mu_s.clone(), sigma, theta_1)?;
        EnvironmentSpec::new(mu_c.clone(), mu_s.clone(), sigma, theta_2)?;
        if n_1 == 0 || n_2 == 0 {
            return Err(Error::InvalidArgument("both environments need at least one sample".into()));
        }
        Ok(Self { mu_c, mu_s, theta_1, theta_2, n_1, n_2, sigma, seed })
    }

    /// Draw fresh means for dimension `d` from the seed's mean stream.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        d: usize,
        (r_c, r_s): (f64, f64),
        thetas: (f64, f64),
        sizes: (usize, usize),
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, &[rng::purpose::MEANS, d as u64]);
        let (mu_c, mu_s) = sample_orthogonal_means(d, r_c, r_s, &mut rng)?;
        Self::new(mu_c, mu_s, thetas, sizes, sigma, seed)
    }

    pub fn d(&self) -> usize {
        self.mu_c.len()
    }

    pub fn n(&self) -> usize {
        self.n_1 + self.n_2
    }

    pub fn r_c(&self) -> f64 {
        self.mu_c.norm()
    }

    pub fn r_s(&self) -> f64 {
        self.mu_s.norm()
    }

    pub fn theta(&self, env: u8) -> f64 {
        if env == 1 { self.theta_1 } else { self.theta_2 }
    }

    pub fn environment(&self, env: u8) -> EnvironmentSpec {
        EnvironmentSpec {
            mu_c: self.mu_c.clone(),
            mu_s: self.mu_s.clone(),
            sigma: self.sigma,
            theta: self.theta(env),
        }
    }

    /// Sample the pooled training set from the seed's data stream.
    pub fn sample_default(&self) -> Result<LabeledDataset> {
        let mut rng = rng::stream(self.seed, &[rng::purpose::DATA, self.d() as u64]);
        sample_dataset(self, &mut rng)
    }
}

/// Labeled samples stored column-wise: column `i` of `xt` is `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    xt: DMatrix<f64>,
    y: Vec<i8>,
    env: Vec<u8>,
}

impl LabeledDataset {
    /// `xt` is d×N (one sample per column).
    pub fn new(xt: DMatrix<f64>, y: Vec<i8>, env: Vec<u8>) -> Result<Self> {
        if xt.ncols() != y.len() || y.len() != env.len() {
            return Err(Error::InvalidArgument(format!(
                "row count {} does not match labels {} / environments {}",
                xt.ncols(),
                y.len(),
                env.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(format!("label {bad} not in {{-1, +1}}")));
        }
        if let Some(bad) = env.iter().find(|&&e| e != 1 && e != 2) {
            return Err(Error::InvalidArgument(format!("environment tag {bad} not in {{1, 2}}")));
        }
        Ok(Self { xt, y, env })
    }

    pub fn from_rows(rows: &[Vector], y: Vec<i8>, env: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("rows have different lengths".into()));
        }
        let xt = if rows.is_empty() { DMatrix::zeros(0, 0) } else { DMatrix::from_columns(rows) };
        Self::new(xt, y, env)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.xt.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The d×N sample matrix.
    pub fn xt(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn x(&self, i: usize) -> Vector {
        self.xt.column(i).into_owned()
    }

    pub fn labels(&self) -> &[i8] {
        &self.y
    }

    pub fn envs(&self) -> &[u8] {
        &self.env
    }

    pub fn count_env(&self, env: u8) -> usize {
        self.env.iter().filter(|&&e| e == env).count()
    }

    /// d×N matrix whose columns are `z_i = y_i x_i`.
    pub fn signed(&self) -> DMatrix<f64> {
        let mut z = self.xt.clone();
        for (i, &yi) in self.y.iter().enumerate() {
            if yi < 0 {
                z.column_mut(i).neg_mut();
            }
        }
        z
    }

    /// `y_i <w, x_i>` for every row.
    pub fn margins(&self, w: &Vector) -> Vector {
        let mut m = self.xt.tr_mul(w);
        for (mi, &yi) in m.iter_mut().zip(&self.y) {
            *mi *= f64::from(yi);
        }
        m
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let cols: Vec<_> = rows.iter().map(|&i| self.xt.column(i)).collect();
        let xt = if cols.is_empty() {
            DMatrix::zeros(self.d(), 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Self {
            xt,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            env: rows.iter().map(|&i| self.env[i]).collect(),
        }
    }

    pub fn env_rows(&self, env: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.env[i] == env).collect()
    }

    pub fn env_subset(&self, env: u8) -> Self {
        self.subset(&self.env_rows(env))
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.d() != other.d() {
            return Err(Error::InvalidArgument("dimension mismatch in concat".into()));
        }
        let mut xt = DMatrix::zeros(self.d(), self.n() + other.n());
        xt.columns_mut(0, self.n()).copy_from(&self.xt);
        xt.columns_mut(self.n(), other.n()).copy_from(&other.xt);
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        let mut env = self.env.clone();
        env.extend_from_slice(&other.env);
        Ok(Self { xt, y, env })
    }

    /// Same rows with every environment tag replaced.
    pub fn retagged(&self, env: u8) -> Result<Self> {
        Self::new(self.xt.clone(), self.y.clone(), vec![env; self.n()])
    }

    /// Apply `f(env, y, column)` to every sample in place, returning a new set.
    pub fn map_rows(&self, mut f: impl FnMut(u8, i8, &mut Vector)) -> Self {
        let mut out = self.clone();
        for i in 0..self.n() {
            let mut col = self.x(i);
            f(self.env[i], self.y[i], &mut col);
            out.xt.set_column(i, &col);
        }
        out
    }
}

/// A homogeneous linear classifier `sign(<w, x>)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    w: Vec<f64>,
}

impl LinearModel {
    pub fn new(w: Vector) -> Result<Self> {
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { w: w.as_slice().to_vec() })
    }

    pub fn w(&self) -> Vector {
        Vector::from_column_slice(&self.w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn d(&self) -> usize {
        self.w.len()
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, v: &Vector) -> f64 {
        self.w.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.w.iter().zip(&other.w).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Draw `mu_c` uniformly on the sphere of radius `r_c`, then `mu_s` uniformly
/// on the radius-`r_s` sphere of the orthogonal complement of `mu_c`.
pub fn sample_orthogonal_means(d: usize, r_c: f64, r_s: f64, rng: &mut Rng) -> Result<(Vector, Vector)> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need d >= 2 for two orthogonal means, got {d}")));
    }
    if !(r_c > 0.0 && r_s > 0.0) {
        return Err(Error::InvalidArgument("mean radii must be positive".into()));
    }
    let g1 = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = &g1 / g1.norm();
    let g2 = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut v = &g2 - &u * u.dot(&g2);
    // one re-orthogonalization pass keeps the inner product at rounding level
    v -= &u * u.dot(&v);
    let v = &v / v.norm();
    Ok((u * r_c, v * r_s))
}

/// Pool `N_1` rows from environment 1 and `N_2` rows from environment 2.
pub fn sample_dataset(instance: &ProblemInstance, rng: &mut Rng) -> Result<LabeledDataset> {
    if instance.n_1 == 0 || instance.n_2 == 0 {
        return Err(Error::InvalidArgument("both environments need at least one sample".into()));
    }
    let d = instance.d();
    let n = instance.n();
    let mut xt = DMatrix::zeros(d, n);
    let mut y = Vec::with_capacity(n);
    let mut env = Vec::with_capacity(n);
    for i in 0..n {
        let e: u8 = if i < instance.n_1 { 1 } else { 2 };
        let yi: i8 = if rng.gen::<bool>() { 1 } else { -1 };
        let s = f64::from(yi);
        let theta = instance.theta(e);
        let mut col = xt.column_mut(i);
        for k in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            col[k] = s * (instance.mu_c[k] + theta * instance.mu_s[k]) + instance.sigma * noise;
        }
        y.push(yi);
        env.push(e);
    }
    LabeledDataset::new(xt, y, env)
}

fn check_model(model: &LinearModel) -> Result<f64> {
    let norm = model.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(norm)
}

/// Test error in environment `theta`: Q((<w,mu_c> + theta <w,mu_s>) / (sigma ||w||)).
pub fn error_at_theta(model: &LinearModel, mu_c: &Vector, mu_s: &Vector, sigma: f64, theta: f64) -> Result<f64> {
    let norm = check_model(model)?;
    Ok(tail_at(model.dot(mu_c), model.dot(mu_s), sigma * norm, theta))
}

fn tail_at(core: f64, spurious: f64, scale: f64, theta: f64) -> f64 {
    gaussian_tail((core + theta * spurious) / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustError {
    pub error: f64,
    pub worst_theta: f64,
}

/// Worst-case error over theta in [-1, 1]. The argument of Q is affine in
/// theta, so the maximum sits at theta = -sign(<w, mu_s>).
pub fn robust_error(model: &LinearModel, mu_c: &Vector, mu_s: &Vector, sigma: f64) -> Result<RobustError> {
    let norm = check_model(model)?;
    let (core, spurious) = (model.dot(mu_c), model.dot(mu_s));
    let worst_theta = if spurious > 0.0 { -1.0 } else { 1.0 };
    Ok(RobustError { error: tail_at(core, spurious, sigma * norm, worst_theta), worst_theta })
}

/// min_i y_i <w, x_i> / (||w|| sqrt(sigma² d)).
pub fn normalized_margin(model: &LinearModel, data: &LabeledDataset, sigma: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = check_model(model)?;
    let m = data.margins(&model.w()).min();
    Ok(m / (norm * (sigma * sigma * data.d() as f64).sqrt()))
}

/// Fraction of rows with y_i <w, x_i> > 0.
pub fn train_accuracy(model: &LinearModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = data.margins(&model.w());
    Ok(m.iter().filter(|&&v| v > 0.0).count() as f64 / data.n() as f64)
}

/// <w, mu_s> / <w, mu_c>.
pub fn spurious_core_ratio(model: &LinearModel, mu_c: &Vector, mu_s: &Vector) -> Result<f64> {
    let core = model.dot(mu_c);
    if core.abs() <= 1e-15 * model.norm() * mu_c.norm() {
        return Err(Error::NoSignal(core));
    }
    Ok(model.dot(mu_s) / core)
}

/// Gaps between environments of a linear score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceGaps {
    /// Mean score over positives of environment 1 minus that of environment 2.
    pub eopp_gap: f64,
    /// Per-class difference of mean scores; `None` when a class is absent.
    pub class_mean_gap_pos: f64,
    pub class_mean_gap_neg: Option<f64>,
    /// |<w, mu_s>| |theta_1 - theta_2| / ||w||, when the truth is supplied.
    pub population_gap: Option<f64>,
}

/// True means and coefficients for the population gap.
pub struct Truth<'a> {
    pub mu_s: &'a Vector,
    pub theta_1: f64,
    pub theta_2: f64,
}

fn class_mean(scores: &Vector, data: &LabeledDataset, label: i8) -> Option<f64> {
    let (sum, count) = scores
        .iter()
        .zip(data.labels())
        .filter(|(_, &y)| y == label)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn invariance_gaps(
    model: &LinearModel,
    data_1: &LabeledDataset,
    data_2: &LabeledDataset,
    truth: Option<Truth<'_>>,
) -> Result<InvarianceGaps> {
    let w = model.w();
    let s1 = data_1.xt().tr_mul(&w);
    let s2 = data_2.xt().tr_mul(&w);
    let p1 = class_mean(&s1, data_1, 1).ok_or(Error::NoPositives(1))?;
    let p2 = class_mean(&s2, data_2, 1).ok_or(Error::NoPositives(2))?;
    let neg = match (class_mean(&s1, data_1, -1), class_mean(&s2, data_2, -1)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    let population_gap = truth.map(|t| model.dot(t.mu_s).abs() * (t.theta_1 - t.theta_2).abs() / model.norm());
    Ok(InvarianceGaps { eopp_gap: p1 - p2, class_mean_gap_pos: p1 - p2, class_mean_gap_neg: neg, population_gap })
}
