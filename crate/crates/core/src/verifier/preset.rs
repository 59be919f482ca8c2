//! Parameter presets for the impossibility regime: mean norms and dimension
//! chosen so that interpolation is easy, the invariant learner succeeds, and
//! every margin-`γ` interpolator leans on the spurious direction.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kv::Table;
use crate::model::ProblemInstance;
use crate::special::gaussian_tail_inv;

/// The unnamed universal constants of the regime. Keys in a constants file:
/// `c_r`, `c_r_prime`, `C_r`, `C_d`, `C_d_prime`, `C_s`, `C_c`, `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresetConstants {
    pub c_r: f64,
    pub c_r_prime: f64,
    #[serde(rename = "C_r")]
    pub big_c_r: f64,
    #[serde(rename = "C_d")]
    pub c_d: f64,
    #[serde(rename = "C_d_prime")]
    pub c_d_prime: f64,
    #[serde(rename = "C_s")]
    pub c_s: f64,
    #[serde(rename = "C_c")]
    pub c_c: f64,
    /// Failure probability inside the `log(1/δ)` dimension factor.
    pub delta: f64,
}

pub const CONSTANT_KEYS: [&str; 8] = ["c_r", "c_r_prime", "C_r", "C_d", "C_d_prime", "C_s", "C_c", "delta"];

impl PresetConstants {
    /// Values that make the worst-case arguments go through. They are far
    /// too conservative to run: d comes out in the trillions.
    pub fn proof_values() -> Self {
        Self {
            c_r: 1.0 / 64.0,
            c_r_prime: 1.0 / 64.0,
            big_c_r: 32.0,
            c_d: 64.0 * 180.0,
            c_d_prime: 64.0 * 180.0,
            c_s: 1.0,
            c_c: 1.0,
            delta: 0.01,
        }
    }

    /// Read the preset keys from a table; other keys are left alone.
    pub fn from_table(table: &Table) -> Result<Self> {
        let c = Self {
            c_r: table.require("c_r")?,
            c_r_prime: table.require("c_r_prime")?,
            big_c_r: table.require("C_r")?,
            c_d: table.require("C_d")?,
            c_d_prime: table.require("C_d_prime")?,
            c_s: table.require("C_s")?,
            c_c: table.require("C_c")?,
            delta: table.require("delta")?,
        };
        for (key, v) in CONSTANT_KEYS.iter().zip(c.values()) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config { line: table.line_of(key), field: key.to_string(), msg: format!("must be positive, got {v}") });
            }
        }
        if c.delta >= 1.0 {
            return Err(Error::Config { line: table.line_of("delta"), field: "delta".into(), msg: "must be below 1".into() });
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&Table::parse(&std::fs::read_to_string(path)?)?)
    }

    fn values(&self) -> [f64; 8] {
        [self.c_r, self.c_r_prime, self.big_c_r, self.c_d, self.c_d_prime, self.c_s, self.c_c, self.delta]
    }

    /// Lines for a constants file, in key order.
    pub fn to_kv(&self) -> String {
        CONSTANT_KEYS.iter().zip(self.values()).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisMode {
    /// `γ ≤ 1/(4√N)` and both environments larger than 65.
    Strict,
    /// Only the margin condition; small environments are allowed.
    Relaxed,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetParams {
    pub n_1: usize,
    pub n_2: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub r_c: f64,
    pub r_s: f64,
    /// `ceil(d_real)`.
    pub d: usize,
    pub d_real: f64,
    /// `1/√d`.
    pub sigma: f64,
    /// The four lower bounds on d before the constant and log factors.
    pub d_terms: [f64; 4],
    /// High-probability lower bound on the normalized margin of `w = μ_c`.
    pub margin_floor: f64,
    pub constants: PresetConstants,
}

impl PresetParams {
    pub fn instance(&self, thetas: (f64, f64), seed: u64) -> Result<ProblemInstance> {
        ProblemInstance::sample(self.d, (self.r_c, self.r_s), thetas, (self.n_1, self.n_2), self.sigma, seed)
    }
}

pub fn theorem_preset(
    n_1: usize,
    n_2: usize,
    gamma: f64,
    epsilon: f64,
    constants: &PresetConstants,
    mode: HypothesisMode,
) -> Result<PresetParams> {
    if n_1 == 0 || n_2 == 0 {
        return Err(Error::InvalidArgument("both environments need samples".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if constants.values().iter().any(|&v| !(v > 0.0) || !v.is_finite()) || constants.delta >= 1.0 {
        return Err(Error::InvalidArgument("constants must be positive and delta below 1".into()));
    }
    let (n1, n2) = (n_1 as f64, n_2 as f64);
    let n = n1 + n2;
    let gamma_cap = 1.0 / (4.0 * n.sqrt());
    if gamma > gamma_cap * (1.0 + 1e-12) {
        return Err(Error::Hypothesis(format!("gamma = {gamma} exceeds 1/(4 sqrt N) = {gamma_cap}")));
    }
    if mode == HypothesisMode::Strict && (n_1 <= 65 || n_2 <= 65) {
        return Err(Error::Hypothesis(format!("environment sizes ({n_1}, {n_2}) must both exceed 65")));
    }
    let n_min = n1.min(n2);
    let c = constants;
    let rs2 = c.c_r.min(c.c_r_prime) / n;
    let rc2 = rs2 / (c.big_c_r * (1.0 + n2.sqrt() / (n1 * gamma)));
    let q = gaussian_tail_inv(epsilon)?;
    let d_terms = [
        n * n,
        n / (gamma * gamma * n1 * n1 * rc2),
        q * q / (n_min * rc2 * rc2),
        1.0 / (n_min * n_min * rc2 * rc2),
    ];
    let scale = c.c_d.max(c.c_d_prime).max(c.c_s * c.c_s).max(c.c_c * c.c_c);
    let d_real = scale * d_terms.iter().cloned().fold(0.0, f64::max) * (1.0 / c.delta).ln();
    if !(d_real.is_finite() && d_real < 1e18) {
        return Err(Error::InvalidArgument(format!("dimension {d_real:e} is out of range")));
    }
    let d = (d_real.ceil() as usize).max(n_1 + n_2 + 1);
    let r_c = rc2.sqrt();
    Ok(PresetParams {
        n_1,
        n_2,
        gamma,
        epsilon,
        r_c,
        r_s: rs2.sqrt(),
        d,
        d_real,
        sigma: 1.0 / (d as f64).sqrt(),
        d_terms,
        margin_floor: r_c - (2.0 * (n / c.delta).ln() / d as f64).sqrt(),
        constants: *c,
    })
}
