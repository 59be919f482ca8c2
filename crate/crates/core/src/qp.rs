//! Nonnegative quadratic programs `min ½ λᵀQλ − bᵀλ` subject to `λ ≥ 0`.
//!
//! Projected coordinate descent, periodically polished by solving the
//! equality system on the current support with a Cholesky factorization.
//! The polish is accepted only if it satisfies the KKT conditions, so a
//! converged answer is exact up to the factorization's rounding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NnqpOptions {
    /// Stop once the projected-gradient residual falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Declare the program unbounded once `sum(λ)` exceeds this.
    pub divergence: f64,
    pub polish_every: usize,
}

impl Default for NnqpOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_sweeps: 200_000, divergence: 1e14, polish_every: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct NnqpSolution {
    pub lambda: DVector<f64>,
    /// `Qλ − b` at the solution.
    pub grad: DVector<f64>,
    pub sweeps: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub enum NnqpOutcome {
    Solved(NnqpSolution),
    /// `sum(λ)` blew past the divergence threshold; carries the last iterate.
    Unbounded(DVector<f64>),
    /// Sweep budget ran out; carries the last iterate and its residual.
    Exhausted(DVector<f64>, f64),
}

fn kkt_residual(lambda: &DVector<f64>, grad: &DVector<f64>, scale: f64) -> f64 {
    lambda
        .iter()
        .zip(grad.iter())
        .map(|(&l, &g)| if l > 0.0 { g.abs() } else { (-g).max(0.0) })
        .fold(0.0, f64::max)
        / scale
}

fn polish(q: &DMatrix<f64>, b: &DVector<f64>, lambda: &DVector<f64>, tol: f64, scale: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
    if support.is_empty() {
        return None;
    }
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |a, c| q[(support[a], support[c])]);
    let rhs = DVector::from_fn(k, |a, _| b[support[a]]);
    let sol = sub.cholesky()?.solve(&rhs);
    if sol.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut out = DVector::zeros(lambda.len());
    for (a, &i) in support.iter().enumerate() {
        out[i] = sol[a];
    }
    let grad = q * &out - b;
    (kkt_residual(&out, &grad, scale) <= tol).then_some((out, grad))
}

pub fn solve_nnqp(q: &DMatrix<f64>, b: &DVector<f64>, opts: &NnqpOptions) -> Result<NnqpOutcome> {
    let n = b.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidArgument("quadratic form and linear term sizes differ".into()));
    }
    if (0..n).any(|i| !(q[(i, i)] > 0.0)) {
        return Err(Error::InvalidArgument("quadratic form needs a positive diagonal".into()));
    }
    // residuals are measured relative to the linear term's size
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let mut lambda: DVector<f64> = DVector::zeros(n);
    let mut grad = -b.clone();
    let mut next_polish = opts.polish_every;
    for sweep in 1..=opts.max_sweeps {
        for i in 0..n {
            let next = (lambda[i] - grad[i] / q[(i, i)]).max(0.0);
            let delta = next - lambda[i];
            if delta != 0.0 {
                lambda[i] = next;
                grad.axpy(delta, &q.column(i), 1.0);
            }
        }
        if lambda.sum() > opts.divergence {
            return Ok(NnqpOutcome::Unbounded(lambda));
        }
        let residual = kkt_residual(&lambda, &grad, scale);
        if residual <= opts.tol {
            return Ok(NnqpOutcome::Solved(NnqpSolution { lambda, grad, sweeps: sweep, residual }));
        }
        if sweep == next_polish {
            if let Some((l, g)) = polish(q, b, &lambda, opts.tol, scale) {
                let residual = kkt_residual(&l, &g, scale);
                return Ok(NnqpOutcome::Solved(NnqpSolution { lambda: l, grad: g, sweeps: sweep, residual }));
            }
            // failed polishes are spaced out so they never dominate the sweeps
            next_polish += opts.polish_every.max(sweep / 4);
        }
    }
    let residual = kkt_residual(&lambda, &grad, scale);
    Ok(NnqpOutcome::Exhausted(lambda, residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solved(out: NnqpOutcome) -> NnqpSolution {
        match out {
            NnqpOutcome::Solved(s) => s,
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Enumerate all supports of a tiny problem and keep the best KKT point.
    fn brute(q: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = b.len();
        let mut best = (f64::INFINITY, DVector::zeros(n));
        for mask in 0u32..(1 << n) {
            let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let mut l = DVector::zeros(n);
            if !s.is_empty() {
                let sub = DMatrix::from_fn(s.len(), s.len(), |a, c| q[(s[a], s[c])]);
                let rhs = DVector::from_fn(s.len(), |a, _| b[s[a]]);
                let Some(x) = sub.lu().solve(&rhs) else { continue };
                for (a, &i) in s.iter().enumerate() {
                    l[i] = x[a];
                }
            }
            if l.iter().any(|&v| v < 0.0) {
                continue;
            }
            let obj = 0.5 * l.dot(&(q * &l)) - b.dot(&l);
            if obj < best.0 {
                best = (obj, l);
            }
        }
        best.1
    }

    #[test]
    fn matches_support_enumeration() {
        let mut state = 17u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..50 {
            let n = 5;
            let a = DMatrix::from_fn(n, 8, |_, _| next());
            let q = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let b = DVector::from_fn(n, |_, _| next());
            let s = solved(solve_nnqp(&q, &b, &NnqpOptions::default()).unwrap());
            let oracle = brute(&q, &b);
            assert!((s.lambda - oracle).amax() < 1e-9);
        }
    }

    #[test]
    fn detects_unbounded_direction() {
        // Q is singular along (1, 1) and b pushes along it.
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let opts = NnqpOptions { divergence: 1e3, ..Default::default() };
        assert!(matches!(solve_nnqp(&q, &b, &opts).unwrap(), NnqpOutcome::Unbounded(_)));
    }
}
