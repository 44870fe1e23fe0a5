//! Scalar statistics used by the certifier.
//!
//! Everything here is a pure function of its arguments. The standard normal
//! CDF is evaluated through `erfc` so that lower-tail probabilities keep full
//! relative precision, which the quantile refinement and the exact-model
//! radius computations both rely on.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use libm::{erfc, lgamma as ln_gamma};

use crate::error::{Error, Result};

/// Largest probability handed to the quantile when computing a radius.
pub const MAX_PA_LOWER: f64 = 1.0 - 1e-15;

/// Bisection stopping width for the Clopper-Pearson bound.
const CP_TOLERANCE: f64 = 1e-12;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub const fn zero() -> Self {
        Probability(0.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A certified l2 radius. Abstentions are reported as radius zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Radius(f64);

impl Radius {
    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 && !value.is_nan() {
            Ok(Radius(value))
        } else {
            Err(Error::domain(format!("radius {value} is negative")))
        }
    }

    pub const fn zero() -> Self {
        Radius(0.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Standard deviation of the isotropic Gaussian smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sigma(f64);

impl Sigma {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Sigma(value))
        } else {
            Err(Error::domain(format!("sigma {value} must be positive and finite")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Inverse of the standard normal CDF on the open interval `(0, 1)`.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by
/// two Halley steps against the `erfc`-based CDF. The upper half is handled
/// through the reflection `z(p) = -z(1 - p)`, which is exact in floating
/// point for `p >= 0.5`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

// p in (0, 0.5)
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut z = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    for _ in 0..2 {
        let e = normal_cdf(z) - p;
        let u = e * (2.0 * PI).sqrt() * (0.5 * z * z).exp();
        if !u.is_finite() {
            break;
        }
        z -= u / (1.0 + 0.5 * z * u);
    }
    z
}

/// `Pr[Binomial(n, p) >= k]`, summed outward from the mode in scaled form so
/// that neither overflow nor catastrophic cancellation occurs.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }

    let nf = n as f64;
    let mode = ((nf + 1.0) * p).floor() as u64;
    let start = mode.clamp(k, n);
    let odds = p / (1.0 - p);

    let log_pmf_start = ln_gamma(nf + 1.0)
        - ln_gamma(start as f64 + 1.0)
        - ln_gamma((n - start) as f64 + 1.0)
        + start as f64 * p.ln()
        + (n - start) as f64 * (-p).ln_1p();

    let mut sum = 1.0;
    let mut term = 1.0;
    let mut j = start;
    while j < n {
        term *= (n - j) as f64 / (j + 1) as f64 * odds;
        j += 1;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    let mut term = 1.0;
    let mut j = start;
    while j > k {
        term *= j as f64 / (n - j + 1) as f64 / odds;
        j -= 1;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }

    (log_pmf_start + sum.ln()).exp().min(1.0)
}

/// One-sided exact (Clopper-Pearson) lower confidence bound on a binomial
/// proportion at confidence `1 - alpha`: the largest `p` with
/// `Pr[Binomial(n, p) >= k] <= alpha`.
///
/// Found by bisection on the exact tail; the returned endpoint is the one
/// that satisfies the tail inequality, so the bound is never optimistic by
/// more than the bisection width. Capped at `k / n`.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<Probability> {
    if n == 0 {
        return Err(Error::domain("Clopper-Pearson needs n >= 1"));
    }
    if k > n {
        return Err(Error::domain(format!("count {k} exceeds trials {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    if k == 0 {
        return Ok(Probability::zero());
    }

    let mut lo = 0.0_f64;
    let mut hi = k as f64 / n as f64;
    if binomial_upper_tail(k, n, hi) <= alpha {
        return Probability::new(hi);
    }
    while hi - lo > CP_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if binomial_upper_tail(k, n, mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Probability::new(lo)
}

/// Certified l2 radius `sigma * quantile(pa_lower)`, or zero when
/// `pa_lower <= 0.5`.
pub fn certified_radius(sigma: Sigma, pa_lower: Probability) -> Result<Radius> {
    let p = pa_lower.value();
    if p >= 1.0 {
        return Err(Error::domain(
            "pa_lower = 1 has no finite radius; clamp or use a finite-sample bound",
        ));
    }
    if p <= 0.5 {
        return Ok(Radius::zero());
    }
    let z = normal_quantile(p.min(MAX_PA_LOWER))?;
    Radius::new(sigma.value() * z)
}
