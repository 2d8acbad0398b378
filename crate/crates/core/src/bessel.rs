//! Zeroth-order Bessel function of the first kind.
//!
//! Three regimes, each accurate to better than 1e-10 absolute:
//! a power series near the origin, Miller's backward recurrence with the
//! `J0 + 2 (J2 + J4 + ...) = 1` normalization in the transition zone, and
//! the Hankel asymptotic expansion for large arguments.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};

const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// Evaluates `J0(x)`. Even in `x`; non-finite input is rejected.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!(
            "bessel_j0 requires a finite argument, got {x}"
        )));
    }
    let ax = x.abs();
    Ok(if ax < SERIES_LIMIT {
        series(ax)
    } else if ax < ASYMPTOTIC_LIMIT {
        miller(ax)
    } else {
        hankel(ax)
    })
}

fn series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn miller(x: f64) -> f64 {
    // start well beyond the turning point so J_start is negligible
    let start = 2 * (((2.0 * x + 40.0) / 2.0) as usize);
    let two_over_x = 2.0 / x;
    let mut next = 0.0; // J_{k+1}
    let mut cur = 1e-30; // J_k
    let mut norm = 0.0;
    let mut j0 = 0.0;
    for k in (1..=start).rev() {
        let prev = k as f64 * two_over_x * cur - next;
        next = cur;
        cur = prev;
        // cur now holds J_{k-1}
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * cur;
        }
        if k == 1 {
            j0 = cur;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            j0 *= 1e-250;
        }
    }
    norm += j0;
    j0 / norm
}

fn hankel(x: f64) -> f64 {
    // a_k = prod_{j<=k} (-(2j-1)^2) / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut xpow = 1.0;
    let mut prev_mag = f64::INFINITY;
    for k in 0..60usize {
        if k > 0 {
            let m = (2 * k - 1) as f64;
            a *= -(m * m) / (8.0 * k as f64);
            xpow *= x;
        }
        let term = a / xpow;
        let mag = term.abs();
        if mag > prev_mag {
            break;
        }
        prev_mag = mag;
        // (-1)^floor(k/2) sign pattern for the even and odd sums
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * term;
        } else {
            q += sign * term;
        }
        if mag < 1e-17 {
            break;
        }
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
