//! Randomized-smoothing certification with per-input noise-level search.
//!
//! The crate certifies l2 robustness radii of Gaussian-smoothed classifiers
//! by Monte Carlo sampling with exact binomial confidence bounds, and picks
//! the noise level per input by a momentum-guided binary search over the
//! sigma-radius curve. Analytic base classifiers with closed-form smoothed
//! probabilities serve as ground truth for testing the whole pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod qcrs;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;

pub use certify::{certify, estimate_radius, CertOutcome, CertParams, RadiusEstimate};
pub use error::{Error, Result};
pub use model::{
    brute_force_pa, exact_pa, exact_prediction, BallModel, BaseModel, Classifier, CompositeModel,
    LabeledRegion, LinearModel, Model, Region,
};
pub use qcrs::{gradient_sign, grid_search, qcrs_optimize, FnCurve, McRadius, OptTrace, QcrsParams, RadiusCurve};
pub use stats::{certified_radius, clopper_pearson_lower, normal_cdf, normal_quantile, Probability, Radius, Sigma};
