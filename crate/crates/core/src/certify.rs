//! Two-phase Monte Carlo certification at a fixed noise level, and the
//! single-phase radius estimator used to steer the sigma search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::rng::derive_seed;
use crate::stats::{certified_radius, clopper_pearson_lower, Probability, Radius, Sigma};

const SELECT_TAG: u64 = 1;
const ESTIMATE_TAG: u64 = 2;

/// Confidence and sampling configuration for one certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertParams {
    /// Failure probability of the certificate.
    pub alpha: f64,
    /// Selection samples.
    pub n0: u64,
    /// Estimation samples.
    pub n: u64,
    pub seed: u64,
}

impl Default for CertParams {
    fn default() -> Self {
        CertParams {
            alpha: 0.001,
            n0: 100,
            n: 100_000,
            seed: 0,
        }
    }
}

impl CertParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.n0 == 0 || self.n == 0 {
            return Err(Error::Config("n0 and n must both be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        CertParams { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertOutcome {
    Certified {
        label: usize,
        pa_lower: Probability,
        radius: Radius,
        forward_passes: u64,
    },
    Abstain {
        forward_passes: u64,
    },
}

impl CertOutcome {
    /// Radius with abstentions counted as zero.
    pub fn radius(&self) -> f64 {
        match self {
            CertOutcome::Certified { radius, .. } => radius.value(),
            CertOutcome::Abstain { .. } => 0.0,
        }
    }

    pub fn forward_passes(&self) -> u64 {
        match self {
            CertOutcome::Certified { forward_passes, .. } | CertOutcome::Abstain { forward_passes } => {
                *forward_passes
            }
        }
    }

    pub fn label(&self) -> Option<usize> {
        match self {
            CertOutcome::Certified { label, .. } => Some(*label),
            CertOutcome::Abstain { .. } => None,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, CertOutcome::Certified { .. })
    }
}

/// Plurality class, ties to the lowest index.
pub fn top_class(counts: &[u64]) -> usize {
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bc), (i, &c)| if c > bc { (i, c) } else { (bi, bc) })
        .0
}

/// Certifies the smoothed classifier at `x`.
///
/// Phase one draws `n0` samples to pick the candidate class; phase two
/// draws `n` fresh samples and lower-bounds that class's probability with
/// a one-sided Clopper-Pearson bound at level `alpha`. The outcome is
/// `Certified` exactly when that bound exceeds one half.
pub fn certify(clf: &Classifier, x: &[f64], sigma: Sigma, params: &CertParams) -> Result<CertOutcome> {
    params.validate()?;
    let select = clf.sample_class_counts(x, sigma, params.n0, derive_seed(params.seed, &[SELECT_TAG]))?;
    let label = top_class(&select);
    let counts = clf.sample_class_counts(x, sigma, params.n, derive_seed(params.seed, &[ESTIMATE_TAG]))?;
    let pa_lower = clopper_pearson_lower(counts[label], params.n, params.alpha)?;
    let forward_passes = params.n0 + params.n;
    if pa_lower.value() > 0.5 {
        Ok(CertOutcome::Certified {
            label,
            pa_lower,
            radius: certified_radius(sigma, pa_lower)?,
            forward_passes,
        })
    } else {
        Ok(CertOutcome::Abstain { forward_passes })
    }
}

/// Result of [`estimate_radius`]. Not a certificate: the class is selected
/// on the same samples it is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub label: usize,
    pub pa_lower: Probability,
    pub radius: Radius,
}

/// Cheap single-phase radius estimate from `n_est` samples.
pub fn estimate_radius(
    clf: &Classifier,
    x: &[f64],
    sigma: Sigma,
    n_est: u64,
    alpha: f64,
    seed: u64,
) -> Result<RadiusEstimate> {
    let counts = clf.sample_class_counts(x, sigma, n_est, seed)?;
    let label = top_class(&counts);
    let pa_lower = clopper_pearson_lower(counts[label], n_est, alpha)?;
    Ok(RadiusEstimate {
        label,
        pa_lower,
        radius: certified_radius(sigma, pa_lower)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CompositeModel;
    use crate::stats::normal_quantile;

    #[test]
    fn ties_break_low() {
        assert_eq!(top_class(&[3, 5, 5, 1]), 1);
        assert_eq!(top_class(&[0, 0]), 0);
        assert_eq!(top_class(&[2]), 0);
    }

    #[test]
    fn constant_classifier_certifies_at_closed_form() {
        let clf = Classifier::new(CompositeModel::constant(1, 0));
        let params = CertParams {
            alpha: 0.001,
            n0: 100,
            n: 100,
            seed: 3,
        };
        let out = certify(&clf, &[0.0], Sigma::new(0.5).unwrap(), &params).unwrap();
        let p = 0.001_f64.powf(1.0 / 100.0);
        match out {
            CertOutcome::Certified {
                label,
                pa_lower,
                radius,
                forward_passes,
            } => {
                assert_eq!(label, 0);
                assert!((pa_lower.value() - p).abs() < 1e-9);
                assert!((radius.value() - 0.5 * normal_quantile(p).unwrap()).abs() < 1e-8);
                assert!((radius.value() - 0.5 * 1.50054).abs() < 1e-4);
                assert_eq!(forward_passes, 200);
            }
            other => panic!("expected certificate, got {other:?}"),
        }
        assert_eq!(clf.forward_passes(), 200);
    }

    #[test]
    fn invalid_params_rejected() {
        let clf = Classifier::new(CompositeModel::constant(1, 0));
        let s = Sigma::new(0.5).unwrap();
        for params in [
            CertParams { alpha: 0.0, ..Default::default() },
            CertParams { alpha: 1.0, ..Default::default() },
            CertParams { n0: 0, ..Default::default() },
            CertParams { n: 0, ..Default::default() },
        ] {
            assert!(matches!(certify(&clf, &[0.0], s, &params), Err(Error::Config(_))));
        }
    }

    #[test]
    fn estimate_radius_constant_closed_form() {
        let clf = Classifier::new(CompositeModel::constant(1, 0));
        let est = estimate_radius(&clf, &[0.0], Sigma::new(0.2).unwrap(), 500, 0.001, 1).unwrap();
        let expected = 0.2 * normal_quantile(0.001_f64.powf(1.0 / 500.0)).unwrap();
        assert!((est.radius.value() - expected).abs() < 1e-8);
        assert!((est.radius.value() / 0.2 - 2.2046).abs() < 1e-3);
    }

    #[test]
    fn outcome_serializes_with_status() {
        let out = CertOutcome::Abstain { forward_passes: 7 };
        assert_eq!(
            serde_json::to_string(&out).unwrap(),
            r#"{"status":"abstain","forward_passes":7}"#
        );
        assert_eq!(out.radius(), 0.0);
    }
}
