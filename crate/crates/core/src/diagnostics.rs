//! Empirical quasiconcavity screening of sigma-radius curves.
//!
//! A curve is sampled on a sigma grid, the grid argmax is taken as the
//! optimum, and the slope signs on either side are tallied: the fraction of
//! positive slopes left of the optimum and of negative slopes right of it,
//! restricted to points with a positive radius. Both fractions equal to one
//! means the curve is not refuted as strictly quasiconcave on this grid; it
//! is a screen, not a proof. Concavity is screened separately with
//! three-point second differences.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::estimate_radius;
use crate::error::{Error, Result};
use crate::model::{exact_prediction, BaseModel, Classifier};
use crate::qcrs::{gradient_sign, OptTrace, RadiusCurve};
use crate::rng::derive_seed;
use crate::stats::Sigma;

/// Exact-curve differences no larger than this many ulps of the radii are
/// rounding noise; their sign is undetermined.
const FLAT_ULPS: f64 = 64.0;

const CURVE_TAG: u64 = 0x6375;
const SQC_TAG: u64 = 0x7371;

/// Absolute slack granted to the per-iteration convergence bound for
/// floating-point midpoint rounding.
pub const BOUND_ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSource {
    Mc { n: u64 },
    Exact,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub sigma: f64,
    pub radius: f64,
    /// Lower bound on (or, for exact curves, the value of) the top-class
    /// probability. Absent for synthetic curves.
    pub pa_lower: Option<f64>,
    /// Predicted class. Absent for synthetic curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRadiusCurve {
    pub samples: Vec<CurveSample>,
    pub source: CurveSource,
}

impl SigmaRadiusCurve {
    pub fn new(samples: Vec<CurveSample>, source: CurveSource) -> Result<Self> {
        if samples.windows(2).any(|w| !(w[0].sigma < w[1].sigma)) {
            return Err(Error::Config("curve sigmas must be strictly increasing".into()));
        }
        if samples.iter().any(|s| !(s.radius >= 0.0)) {
            return Err(Error::domain("curve radii must be non-negative"));
        }
        Ok(SigmaRadiusCurve { samples, source })
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.sigma).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.radius).collect()
    }

    /// The curve of a point whose true class is `label`: radii certified
    /// for any other class count as zero.
    pub fn for_label(&self, label: usize) -> SigmaRadiusCurve {
        let samples = self
            .samples
            .iter()
            .map(|s| match s.label {
                Some(l) if l != label => CurveSample { radius: 0.0, ..*s },
                _ => *s,
            })
            .collect();
        SigmaRadiusCurve {
            samples,
            source: self.source,
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.samples.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    /// Index and sigma of the largest radius, ties to the smaller sigma.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.samples.iter().enumerate() {
            if best.is_none_or(|(j, _)| s.radius > self.samples[j].radius) {
                best = Some((i, s.sigma));
            }
        }
        best
    }

    /// `sigma,radius,pa_lower` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,radius,pa_lower\n");
        for s in &self.samples {
            match s.pa_lower {
                Some(p) => writeln!(out, "{},{},{}", s.sigma, s.radius, p),
                None => writeln!(out, "{},{},", s.sigma, s.radius),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }
}

fn check_grid(sigmas: &[f64]) -> Result<()> {
    if sigmas.len() < 2 {
        return Err(Error::Config("curve sampling needs at least 2 sigmas".into()));
    }
    Ok(())
}

/// Monte Carlo curve: one radius estimate of `n` samples per sigma.
pub fn sample_curve(
    clf: &Classifier,
    x: &[f64],
    sigmas: &[f64],
    n: u64,
    alpha: f64,
    seed: u64,
) -> Result<SigmaRadiusCurve> {
    check_grid(sigmas)?;
    let samples = sigmas
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let est = estimate_radius(clf, x, Sigma::new(s)?, n, alpha, derive_seed(seed, &[CURVE_TAG, i as u64]))?;
            Ok(CurveSample {
                sigma: s,
                radius: est.radius.value(),
                pa_lower: Some(est.pa_lower.value()),
                label: Some(est.label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SigmaRadiusCurve::new(samples, CurveSource::Mc { n })
}

/// Exact curve from the model's closed-form smoothed probabilities.
pub fn sample_exact_curve(model: &dyn BaseModel, x: &[f64], sigmas: &[f64]) -> Result<SigmaRadiusCurve> {
    check_grid(sigmas)?;
    let samples = sigmas
        .iter()
        .map(|&s| {
            let pred = exact_prediction(model, x, Sigma::new(s)?)?;
            Ok(CurveSample {
                sigma: s,
                radius: pred.radius.value(),
                pa_lower: Some(pred.pa.value()),
                label: Some(pred.label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SigmaRadiusCurve::new(samples, CurveSource::Exact)
}

/// Curve of a deterministic function on a grid.
pub fn curve_from_fn(sigmas: &[f64], f: impl Fn(f64) -> f64) -> Result<SigmaRadiusCurve> {
    check_grid(sigmas)?;
    let samples = sigmas
        .iter()
        .map(|&s| CurveSample {
            sigma: s,
            radius: f(s).max(0.0),
            pa_lower: None,
            label: None,
        })
        .collect();
    SigmaRadiusCurve::new(samples, CurveSource::Deterministic)
}

/// Scale-aware default concavity tolerance.
pub fn default_concavity_tol(curve: &SigmaRadiusCurve) -> f64 {
    1e-6 * curve.max_radius()
}

/// True iff every three-point divided second difference is at most `tol`.
pub fn concavity_check(curve: &SigmaRadiusCurve, tol: f64) -> Result<bool> {
    if curve.samples.len() < 3 {
        return Err(Error::Config("concavity check needs at least 3 points".into()));
    }
    Ok(second_differences(curve).into_iter().all(|d| d <= tol))
}

/// Divided second differences at each interior grid point. On a uniform
/// grid this is `(r[i-1] - 2 r[i] + r[i+1]) / h^2`.
pub fn second_differences(curve: &SigmaRadiusCurve) -> Vec<f64> {
    curve
        .samples
        .windows(3)
        .map(|w| {
            let h0 = w[1].sigma - w[0].sigma;
            let h1 = w[2].sigma - w[1].sigma;
            let right = (w[2].radius - w[1].radius) / h1;
            let left = (w[1].radius - w[0].radius) / h0;
            2.0 * (right - left) / (h0 + h1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqcReport {
    pub sigma_star: f64,
    pub upsilon_minus: f64,
    pub upsilon_plus: f64,
    /// Both fractions are one: not refuted as strictly quasiconcave on this
    /// grid. This is not a certificate of quasiconcavity.
    pub quasiconcave: bool,
    pub concave: bool,
    pub n_left: usize,
    pub n_right: usize,
    pub positive_left: usize,
    pub negative_right: usize,
    /// Points skipped because the exact difference is below rounding
    /// resolution.
    #[serde(default)]
    pub n_flat: usize,
    /// No grid point has a positive radius.
    pub degenerate: bool,
}

fn tally(
    curve: &SigmaRadiusCurve,
    sigma_star: f64,
    mut sign_at: impl FnMut(usize) -> Result<Option<i8>>,
) -> Result<SqcReport> {
    let mut n_flat = 0;
    let mut n_left = 0;
    let mut n_right = 0;
    let mut positive_left = 0;
    let mut negative_right = 0;
    for (i, s) in curve.samples.iter().enumerate() {
        if !(s.radius > 0.0) || s.sigma == sigma_star {
            continue;
        }
        let Some(sign) = sign_at(i)? else {
            n_flat += 1;
            continue;
        };
        if s.sigma < sigma_star {
            n_left += 1;
            positive_left += (sign > 0) as usize;
        } else {
            n_right += 1;
            negative_right += (sign < 0) as usize;
        }
    }
    let frac = |hits: usize, n: usize| if n == 0 { 1.0 } else { hits as f64 / n as f64 };
    let upsilon_minus = frac(positive_left, n_left);
    let upsilon_plus = frac(negative_right, n_right);
    let concave = if curve.samples.len() >= 3 {
        concavity_check(curve, default_concavity_tol(curve))?
    } else {
        true
    };
    Ok(SqcReport {
        sigma_star,
        upsilon_minus,
        upsilon_plus,
        quasiconcave: upsilon_minus == 1.0 && upsilon_plus == 1.0,
        concave,
        n_left,
        n_right,
        positive_left,
        negative_right,
        n_flat,
        degenerate: curve.samples.iter().all(|s| s.radius <= 0.0),
    })
}

/// Slope signs taken from the curve itself: forward differences toward the
/// optimum on the left, backward differences on the right. Use for exact
/// and deterministic curves. Differences within a few ulps of the radii
/// cannot be signed and are counted in `n_flat` instead.
pub fn sqc_estimate(curve: &SigmaRadiusCurve, sigma_star: f64) -> Result<SqcReport> {
    let r = curve.radii();
    let sigmas = curve.sigmas();
    tally(curve, sigma_star, |i| {
        let (a, b) = if sigmas[i] < sigma_star {
            (r[i], r[i + 1])
        } else if i > 0 {
            (r[i - 1], r[i])
        } else {
            return Ok(None);
        };
        let d = b - a;
        if d.abs() <= FLAT_ULPS * f64::EPSILON * a.abs().max(b.abs()) {
            Ok(None)
        } else {
            Ok(Some(if d > 0.0 { 1 } else { -1 }))
        }
    })
}

/// Slope signs from Monte Carlo finite differences `R(s + tau) - R(s - tau)`
/// at each certified grid point, with the same estimator the optimizer
/// uses. `curve` decides which grid points have a positive radius.
pub fn sqc_estimate_mc(
    curve: &SigmaRadiusCurve,
    estimator: &dyn RadiusCurve,
    sigma_star: f64,
    tau: f64,
    seed: u64,
) -> Result<SqcReport> {
    let sqc_seed = derive_seed(seed, &[SQC_TAG]);
    tally(curve, sigma_star, |i| {
        let s = Sigma::new(curve.samples[i].sigma)?;
        Ok(Some(gradient_sign(estimator, s, tau, sqc_seed, i as u64)?.sign))
    })
}

/// Per-iteration check of `|sigma_t - sigma*| <= (sigma_max - sigma_min) / 2^t`.
/// Returns the margins `bound - error`; fails on the first violation.
pub fn convergence_trace_check(trace: &OptTrace, sigma_star: f64) -> Result<Vec<f64>> {
    let width = trace.sigma_max - trace.sigma_min;
    trace
        .iterations
        .iter()
        .map(|it| {
            let bound = width / 2f64.powi(it.t as i32);
            let error = (it.sigma_t - sigma_star).abs();
            if error > bound + BOUND_ROUNDING_SLACK {
                Err(Error::BoundViolation { t: it.t, error, bound })
            } else {
                Ok(bound - error)
            }
        })
        .collect()
}
