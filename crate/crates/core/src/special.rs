//! Gaussian tail function and its inverse.

use crate::error::{Error, Result};
use libm::erfc;

/// Q(t) = P(N(0,1) > t).
pub fn gaussian_tail(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Inverse of [`gaussian_tail`] by bisection; the bracket is shrunk until it
/// is narrower than 1e-12.
pub fn gaussian_tail_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("tail probability {p} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if gaussian_tail(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
