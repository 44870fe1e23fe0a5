//! Momentum-guided binary search for the radius-maximizing noise level.
//!
//! The search assumes the sigma-radius curve is strictly quasiconcave on its
//! certified region, so the sign of a finite difference tells which half of
//! the current interval holds the maximizer. On the flat zero-radius region
//! the sign vanishes; the momentum then sends the search back opposite to
//! its previous move (downward when there was none). A final comparison
//! against the default sigma guards against curves where the assumption
//! fails.

use serde::{Deserialize, Serialize};

use crate::certify::estimate_radius;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::rng::derive_seed;
use crate::stats::Sigma;

/// Lower limit for finite-difference evaluation points.
pub const SIGMA_FLOOR: f64 = 1e-4;

const GRAD_TAG: u64 = 0x67;
const REJECT_TAG: u64 = 0x72;
const GRID_TAG: u64 = 0x6772;

/// A sigma-radius curve the optimizer can query.
pub trait RadiusCurve: Sync {
    /// Radius at `sigma`, abstentions as zero. `seed` keys the sample stream
    /// for stochastic curves and is ignored by deterministic ones.
    fn radius(&self, sigma: Sigma, seed: u64) -> Result<f64>;

    /// Forward passes spent by one call to [`RadiusCurve::radius`].
    fn passes_per_eval(&self) -> u64;
}

/// Monte Carlo curve backed by [`estimate_radius`].
#[derive(Debug, Clone, Copy)]
pub struct McRadius<'a> {
    pub clf: &'a Classifier,
    pub x: &'a [f64],
    pub n_est: u64,
    pub alpha: f64,
}

impl RadiusCurve for McRadius<'_> {
    fn radius(&self, sigma: Sigma, seed: u64) -> Result<f64> {
        Ok(estimate_radius(self.clf, self.x, sigma, self.n_est, self.alpha, seed)?
            .radius
            .value())
    }

    fn passes_per_eval(&self) -> u64 {
        self.n_est
    }
}

/// A deterministic curve given as a closure.
pub struct FnCurve<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> RadiusCurve for FnCurve<F> {
    fn radius(&self, sigma: Sigma, _seed: u64) -> Result<f64> {
        Ok((self.0)(sigma.value()).max(0.0))
    }

    fn passes_per_eval(&self) -> u64 {
        0
    }
}

/// Search configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcrsParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Stop once the interval is no wider than this.
    pub epsilon: f64,
    /// Finite-difference half-step.
    pub tau: f64,
    /// Samples per radius estimate.
    pub grad_samples: u64,
    /// The model's default noise level, used by the final comparison.
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for QcrsParams {
    fn default() -> Self {
        QcrsParams {
            sigma_min: 0.15,
            sigma_max: 0.7,
            epsilon: 0.01,
            tau: 0.05,
            grad_samples: 500,
            sigma0: 0.25,
            seed: 0,
        }
    }
}

impl QcrsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "search region [{}, {}] must satisfy 0 < sigma_min < sigma_max",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.sigma_max - self.sigma_min) {
            return Err(Error::Config(format!(
                "epsilon {} must lie in (0, sigma_max - sigma_min)",
                self.epsilon
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if self.grad_samples == 0 {
            return Err(Error::Config("grad_samples must be at least 1".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config(format!("sigma0 {} must be positive", self.sigma0)));
        }
        Ok(())
    }

    /// Number of halvings until the interval is no wider than epsilon.
    pub fn iteration_count(&self) -> usize {
        ((self.sigma_max - self.sigma_min) / self.epsilon).log2().ceil().max(0.0) as usize
    }
}

/// Sign of the central difference `R(sigma + tau) - R(sigma - tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub sign: i8,
    /// The raw difference (not divided by the step).
    pub diff: f64,
    pub forward_passes: u64,
}

/// Evaluates the difference sign at `sigma` with per-side seeds derived from
/// `(seed, step, side)`. The lower point is floored at [`SIGMA_FLOOR`].
pub fn gradient_sign(
    curve: &dyn RadiusCurve,
    sigma: Sigma,
    tau: f64,
    seed: u64,
    step: u64,
) -> Result<GradientProbe> {
    let hi = Sigma::new(sigma.value() + tau)?;
    let lo = Sigma::new((sigma.value() - tau).max(SIGMA_FLOOR))?;
    let (r_hi, r_lo) = rayon::join(
        || curve.radius(hi, derive_seed(seed, &[GRAD_TAG, step, 1])),
        || curve.radius(lo, derive_seed(seed, &[GRAD_TAG, step, 0])),
    );
    let diff = r_hi? - r_lo?;
    let sign = if diff > 0.0 {
        1
    } else if diff < 0.0 {
        -1
    } else {
        0
    };
    Ok(GradientProbe {
        sign,
        diff,
        forward_passes: 2 * curve.passes_per_eval(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// One-based iteration index.
    pub t: usize,
    /// Midpoint probed at this iteration.
    pub sigma_t: f64,
    pub grad_sign: i8,
    pub grad_diff: f64,
    /// Momentum after the update.
    pub momentum: i8,
    /// Interval after the update.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub sigma0: f64,
    pub iterations: Vec<IterationRecord>,
    /// Midpoint of the final interval.
    pub sigma_hat: f64,
    pub radius_hat: f64,
    pub radius_sigma0: f64,
    pub chosen_sigma: f64,
    /// True when the default sigma won the final comparison.
    pub rejected: bool,
    pub forward_passes: u64,
}

/// Runs the search on `curve`.
pub fn qcrs_optimize(curve: &dyn RadiusCurve, params: &QcrsParams) -> Result<(Sigma, OptTrace)> {
    params.validate()?;
    let mut lo = params.sigma_min;
    let mut hi = params.sigma_max;
    let mut momentum: i8 = 0;
    let mut iterations = Vec::new();
    let mut forward_passes = 0;

    while hi - lo > params.epsilon {
        let t = iterations.len() + 1;
        let sigma = 0.5 * (lo + hi);
        let probe = gradient_sign(curve, Sigma::new(sigma)?, params.tau, params.seed, t as u64)?;
        forward_passes += probe.forward_passes;
        match probe.sign {
            1 => {
                lo = sigma;
                momentum = 1;
            }
            -1 => {
                hi = sigma;
                momentum = -1;
            }
            _ if momentum >= 0 => {
                hi = sigma;
                momentum = -1;
            }
            _ => {
                lo = sigma;
                momentum = 1;
            }
        }
        iterations.push(IterationRecord {
            t,
            sigma_t: sigma,
            grad_sign: probe.sign,
            grad_diff: probe.diff,
            momentum,
            lo,
            hi,
        });
    }

    let sigma_hat = Sigma::new(0.5 * (lo + hi))?;
    let sigma0 = Sigma::new(params.sigma0)?;
    let radius_hat = curve.radius(sigma_hat, derive_seed(params.seed, &[REJECT_TAG, 0]))?;
    let radius_sigma0 = curve.radius(sigma0, derive_seed(params.seed, &[REJECT_TAG, 1]))?;
    forward_passes += 2 * curve.passes_per_eval();

    let rejected = radius_sigma0 >= radius_hat;
    let chosen = if rejected { sigma0 } else { sigma_hat };
    let trace = OptTrace {
        sigma_min: params.sigma_min,
        sigma_max: params.sigma_max,
        epsilon: params.epsilon,
        tau: params.tau,
        sigma0: params.sigma0,
        iterations,
        sigma_hat: sigma_hat.value(),
        radius_hat,
        radius_sigma0,
        chosen_sigma: chosen.value(),
        rejected,
        forward_passes,
    };
    Ok((chosen, trace))
}

/// Convenience wrapper: search with Monte Carlo estimates of
/// `params.grad_samples` draws at confidence level `alpha`.
pub fn qcrs_optimize_point(
    clf: &Classifier,
    x: &[f64],
    params: &QcrsParams,
    alpha: f64,
) -> Result<(Sigma, OptTrace)> {
    let curve = McRadius {
        clf,
        x,
        n_est: params.grad_samples,
        alpha,
    };
    qcrs_optimize(&curve, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub sigma: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub sigma: f64,
    pub curve: Vec<GridPoint>,
    pub forward_passes: u64,
}

/// Exhaustive evaluation over an increasing sigma list; ties go to the
/// smaller sigma.
pub fn grid_search(curve: &dyn RadiusCurve, sigmas: &[f64], seed: u64) -> Result<GridResult> {
    if sigmas.is_empty() {
        return Err(Error::Config("grid search needs at least one sigma".into()));
    }
    if sigmas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("grid sigmas must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(sigmas.len());
    for (i, &s) in sigmas.iter().enumerate() {
        let radius = curve.radius(Sigma::new(s)?, derive_seed(seed, &[GRID_TAG, i as u64]))?;
        points.push(GridPoint { sigma: s, radius });
    }
    let best = points
        .iter()
        .fold(points[0], |best, p| if p.radius > best.radius { *p } else { best });
    Ok(GridResult {
        sigma: best.sigma,
        forward_passes: sigmas.len() as u64 * curve.passes_per_eval(),
        curve: points,
    })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parabola(s: f64) -> f64 {
        1.0 - (s - 0.3) * (s - 0.3)
    }

    #[test]
    fn gradient_sign_examples() {
        let c = FnCurve(parabola);
        assert_eq!(gradient_sign(&c, Sigma::new(0.2).unwrap(), 0.05, 0, 1).unwrap().sign, 1);
        assert_eq!(gradient_sign(&c, Sigma::new(0.4).unwrap(), 0.05, 0, 1).unwrap().sign, -1);
        let flat = FnCurve(|_| 0.0);
        let probe = gradient_sign(&flat, Sigma::new(0.3).unwrap(), 0.05, 0, 1).unwrap();
        assert_eq!((probe.sign, probe.diff), (0, 0.0));
    }

    #[test]
    fn lower_probe_point_is_floored() {
        let seen = std::sync::Mutex::new(Vec::new());
        let c = FnCurve(|s| {
            seen.lock().unwrap().push(s);
            s
        });
        gradient_sign(&c, Sigma::new(0.01).unwrap(), 0.05, 0, 1).unwrap();
        let seen = seen.into_inner().unwrap();
        assert!(seen.contains(&SIGMA_FLOOR));
        assert!(seen.iter().any(|&s| (s - 0.06).abs() < 1e-15));
    }

    #[test]
    fn six_iterations_on_paper_region() {
        let params = QcrsParams {
            sigma_min: 0.12,
            sigma_max: 0.50,
            sigma0: 0.25,
            ..Default::default()
        };
        assert_eq!(params.iteration_count(), 6);
        let star = 0.31;
        let c = FnCurve(move |s: f64| 1.0 - (s - star).abs());
        let (sigma, trace) = qcrs_optimize(&c, &params).unwrap();
        assert_eq!(trace.iterations.len(), 6);
        assert!((sigma.value() - star).abs() <= 0.006);
        assert!(!trace.rejected);
    }

    #[test]
    fn flat_curve_falls_back_to_default_sigma() {
        let params = QcrsParams {
            sigma_min: 0.12,
            sigma_max: 0.50,
            sigma0: 0.25,
            ..Default::default()
        };
        let (sigma, trace) = qcrs_optimize(&FnCurve(|_| 0.0), &params).unwrap();
        assert_eq!(sigma.value(), 0.25);
        assert!(trace.rejected);
        // M = 0 on the first zero sign moves the upper end down, then the
        // momentum alternates.
        let moves: Vec<i8> = trace.iterations.iter().map(|r| r.momentum).collect();
        assert_eq!(moves, vec![-1, 1, -1, 1, -1, 1]);
    }

    #[test]
    fn zero_plateau_after_a_right_move_turns_left() {
        // Certified only on (0.30, 0.36) with the peak at 0.33.
        let c = FnCurve(|s: f64| 0.03 - (s - 0.33).abs());
        let params = QcrsParams {
            sigma_min: 0.1,
            sigma_max: 0.9,
            sigma0: 0.5,
            tau: 0.01,
            ..Default::default()
        };
        let (sigma, trace) = qcrs_optimize(&c, &params).unwrap();
        let third = trace.iterations[2];
        assert_eq!(trace.iterations[1].momentum, 1);
        assert_eq!((third.grad_sign, third.momentum), (0, -1));
        assert_eq!(third.hi, third.sigma_t);
        assert!((sigma.value() - 0.33).abs() < 0.01, "{}", sigma.value());
        assert!(!trace.rejected);
    }

    #[test]
    fn invalid_params() {
        let bad = [
            QcrsParams { sigma_min: 0.5, sigma_max: 0.5, ..Default::default() },
            QcrsParams { sigma_min: 0.0, ..Default::default() },
            QcrsParams { epsilon: 0.0, ..Default::default() },
            QcrsParams { epsilon: 1.0, ..Default::default() },
            QcrsParams { tau: -0.1, ..Default::default() },
            QcrsParams { grad_samples: 0, ..Default::default() },
            QcrsParams { sigma0: 0.0, ..Default::default() },
        ];
        for p in bad {
            assert!(qcrs_optimize(&FnCurve(parabola), &p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn grid_ties_prefer_smaller_sigma() {
        let res = grid_search(&FnCurve(|_| 1.0), &[0.1, 0.2, 0.3], 0).unwrap();
        assert_eq!(res.sigma, 0.1);
        assert!(grid_search(&FnCurve(parabola), &[], 0).is_err());
        assert!(grid_search(&FnCurve(parabola), &[0.2, 0.2], 0).is_err());
    }

    #[test]
    fn grid_finds_parabola_peak() {
        let sigmas = linspace(0.12, 0.5, 24);
        let res = grid_search(&FnCurve(parabola), &sigmas, 0).unwrap();
        assert!((res.sigma - 0.3).abs() <= sigmas[1] - sigmas[0]);
        assert_eq!(res.curve.len(), 24);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.25, 2.0, 8);
        assert_eq!(v.len(), 8);
        assert_eq!(v[0], 0.25);
        assert_eq!(v[7], 2.0);
    }
}
