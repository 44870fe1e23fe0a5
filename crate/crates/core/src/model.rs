//! Base classifiers and Gaussian sampling through them.
//!
//! [`BaseModel`] is the pluggable classifier interface. The three concrete
//! families (half-space, ball, first-match composite) are cheap to evaluate
//! and, in the geometries where it is tractable, expose the exact Gaussian
//! measure of each class region. That measure is the ground truth the
//! Monte Carlo certifier is tested against.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, NoiseStream};
use crate::stats::{normal_cdf, normal_quantile, Probability, Radius, Sigma};

/// Draws per parallel work item in [`Classifier::sample_class_counts`].
const SAMPLE_CHUNK: u64 = 8192;

const ORACLE_TAG: u64 = 0x6f72_6163_6c65;

/// A deterministic classifier over real vectors.
pub trait BaseModel: Send + Sync + fmt::Debug {
    /// Class index for `x`. Must be total and `< num_classes()`.
    fn classify(&self, x: &[f64]) -> usize;

    fn num_classes(&self) -> usize;

    fn dimension(&self) -> usize;

    /// Exact Gaussian measure of `label`'s region under `N(x, sigma^2 I)`,
    /// when the geometry admits a closed form.
    fn gaussian_mass(&self, _x: &[f64], _sigma: Sigma, _label: usize) -> Option<GaussianMass> {
        None
    }
}

/// Gaussian measure of a class region, carried together with the measure of
/// its complement so that probabilities near one keep their precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMass {
    pub mass: f64,
    pub complement: f64,
    /// l2 distance from the center to the complement region (0 if inside it).
    pub boundary_distance: f64,
}

impl GaussianMass {
    fn everything() -> Self {
        GaussianMass {
            mass: 1.0,
            complement: 0.0,
            boundary_distance: f64::INFINITY,
        }
    }

    fn nothing() -> Self {
        GaussianMass {
            mass: 0.0,
            complement: 1.0,
            boundary_distance: 0.0,
        }
    }

    /// Exact smoothed radius `sigma * quantile(mass)`, computed from the
    /// complement. When the complement underflows the radius has converged
    /// to the distance to the complement region.
    pub fn radius(&self, sigma: Sigma) -> Radius {
        if self.mass <= 0.5 {
            return Radius::zero();
        }
        let r = if self.complement > 0.0 {
            match normal_quantile(self.complement) {
                Ok(z) => -sigma.value() * z,
                Err(_) => 0.0,
            }
        } else {
            self.boundary_distance
        };
        Radius::new(r.max(0.0)).unwrap_or(Radius::zero())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(model: &dyn BaseModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: x.len(),
        });
    }
    Ok(())
}

// Measure of [lo, hi] under N(center, sigma^2), evaluated on whichever tail
// keeps the subtraction well conditioned.
fn interval_measure(lo: f64, hi: f64, center: f64, sigma: f64) -> f64 {
    let u = (lo - center) / sigma;
    let v = (hi - center) / sigma;
    let m = if u >= 0.0 {
        normal_cdf(-u) - normal_cdf(-v)
    } else if v <= 0.0 {
        normal_cdf(v) - normal_cdf(u)
    } else {
        1.0 - normal_cdf(u) - normal_cdf(-v)
    };
    m.max(0.0)
}

fn interval_distance(lo: f64, hi: f64, t: f64) -> f64 {
    (lo - t).max(t - hi).max(0.0)
}

/// Half-space classifier: `positive_label` iff `w.x + b >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub positive_label: usize,
    pub negative_label: usize,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64, positive_label: usize, negative_label: usize) -> Result<Self> {
        let m = LinearModel {
            w,
            b,
            positive_label,
            negative_label,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::Config("linear model needs a non-empty weight vector".into()));
        }
        if !(norm(&self.w) > 0.0) || !self.b.is_finite() {
            return Err(Error::Config("linear model needs finite b and |w| > 0".into()));
        }
        Ok(())
    }

    /// Signed distance from `x` to the decision boundary.
    pub fn signed_margin(&self, x: &[f64]) -> f64 {
        (dot(&self.w, x) + self.b) / norm(&self.w)
    }
}

impl BaseModel for LinearModel {
    fn classify(&self, x: &[f64]) -> usize {
        if dot(&self.w, x) + self.b >= 0.0 {
            self.positive_label
        } else {
            self.negative_label
        }
    }

    fn num_classes(&self) -> usize {
        self.positive_label.max(self.negative_label) + 1
    }

    fn dimension(&self) -> usize {
        self.w.len()
    }

    fn gaussian_mass(&self, x: &[f64], sigma: Sigma, label: usize) -> Option<GaussianMass> {
        let pos = label == self.positive_label;
        let neg = label == self.negative_label;
        if pos && neg {
            return Some(GaussianMass::everything());
        }
        if !pos && !neg {
            return Some(GaussianMass::nothing());
        }
        let m = self.signed_margin(x);
        let m = if pos { m } else { -m };
        Some(GaussianMass {
            mass: normal_cdf(m / sigma.value()),
            complement: normal_cdf(-m / sigma.value()),
            boundary_distance: m.max(0.0),
        })
    }
}

/// Closed-ball classifier: `inside_label` iff `|x - center| <= rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallModel {
    pub center: Vec<f64>,
    pub rho: f64,
    pub inside_label: usize,
    pub outside_label: usize,
}

impl BallModel {
    pub fn new(center: Vec<f64>, rho: f64, inside_label: usize, outside_label: usize) -> Result<Self> {
        let m = BallModel {
            center,
            rho,
            inside_label,
            outside_label,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.center.is_empty() {
            return Err(Error::Config("ball model needs a non-empty center".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("ball radius {} must be positive", self.rho)));
        }
        Ok(())
    }
}

impl BaseModel for BallModel {
    fn classify(&self, x: &[f64]) -> usize {
        let d2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        if d2 <= self.rho * self.rho {
            self.inside_label
        } else {
            self.outside_label
        }
    }

    fn num_classes(&self) -> usize {
        self.inside_label.max(self.outside_label) + 1
    }

    fn dimension(&self) -> usize {
        self.center.len()
    }

    /// Only the one-dimensional case is closed form:
    /// `Phi((rho - t)/sigma) - Phi((-rho - t)/sigma)` with `t = x - center`.
    fn gaussian_mass(&self, x: &[f64], sigma: Sigma, label: usize) -> Option<GaussianMass> {
        if self.center.len() != 1 {
            return None;
        }
        let inside = label == self.inside_label;
        let outside = label == self.outside_label;
        if inside && outside {
            return Some(GaussianMass::everything());
        }
        if !inside && !outside {
            return Some(GaussianMass::nothing());
        }
        let s = sigma.value();
        let t = x[0] - self.center[0];
        let rho = self.rho;
        let in_mass = interval_measure(-rho, rho, t, s);
        let out_mass = normal_cdf((t - rho) / s) + normal_cdf((-rho - t) / s);
        Some(if inside {
            GaussianMass {
                mass: in_mass,
                complement: out_mass,
                boundary_distance: (rho - t.abs()).max(0.0),
            }
        } else {
            GaussianMass {
                mass: out_mass,
                complement: in_mass,
                boundary_distance: (t.abs() - rho).max(0.0),
            }
        })
    }
}

/// A region used by [`CompositeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// Closed ball `|x - center| <= radius`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Half-space `w.x + b >= 0`.
    HalfSpace { w: Vec<f64>, b: f64 },
}

impl Region {
    fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 <= radius * radius
            }
            Region::HalfSpace { w, b } => dot(w, x) + b >= 0.0,
        }
    }

    fn dimension(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::HalfSpace { w, .. } => w.len(),
        }
    }

    // Boundary points on the real line (1-D only).
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Region::Ball { center, radius } => vec![center[0] - radius, center[0] + radius],
            Region::HalfSpace { w, b } if w[0] != 0.0 => vec![-b / w[0]],
            Region::HalfSpace { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRegion {
    #[serde(flatten)]
    pub region: Region,
    pub label: usize,
}

/// First-match-wins list of labeled regions with a default label.
///
/// An empty region list is the constant classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub regions: Vec<LabeledRegion>,
    pub default_label: usize,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl CompositeModel {
    pub fn new(dimension: usize, regions: Vec<LabeledRegion>, default_label: usize) -> Result<Self> {
        let m = CompositeModel {
            dimension: Some(dimension),
            regions,
            default_label,
            num_classes: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(dimension: usize, label: usize) -> Self {
        CompositeModel {
            dimension: Some(dimension),
            regions: Vec::new(),
            default_label: label,
            num_classes: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let dim = self.resolved_dimension()?;
        for (i, r) in self.regions.iter().enumerate() {
            if r.region.dimension() != dim {
                return Err(Error::Config(format!(
                    "composite region {i} has dimension {}, expected {dim}",
                    r.region.dimension()
                )));
            }
            match &r.region {
                Region::Ball { radius, .. } if !(*radius >= 0.0 && radius.is_finite()) => {
                    return Err(Error::Config(format!("composite region {i}: bad ball radius")));
                }
                _ => {}
            }
        }
        let needed = self.max_label() + 1;
        if let Some(n) = self.num_classes {
            if n < needed {
                return Err(Error::Config(format!(
                    "num_classes {n} is smaller than the largest label + 1 ({needed})"
                )));
            }
        }
        Ok(())
    }

    fn resolved_dimension(&self) -> Result<usize> {
        match (self.dimension, self.regions.first()) {
            (Some(d), _) if d >= 1 => Ok(d),
            (None, Some(r)) if r.region.dimension() >= 1 => Ok(r.region.dimension()),
            _ => Err(Error::Config(
                "composite model needs a dimension or at least one region".into(),
            )),
        }
    }

    fn max_label(&self) -> usize {
        self.regions
            .iter()
            .map(|r| r.label)
            .fold(self.default_label, usize::max)
    }

    // Labeled segments of the real line, from the breakpoints of every region.
    fn segments_1d(&self) -> Vec<(f64, f64, usize)> {
        let mut cuts: Vec<f64> = self.regions.iter().flat_map(|r| r.region.breakpoints()).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if cuts.is_empty() {
            return vec![(f64::NEG_INFINITY, f64::INFINITY, self.classify(&[0.0]))];
        }
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend_from_slice(&cuts);
        edges.push(f64::INFINITY);
        edges
            .windows(2)
            .map(|w| {
                let rep = match (w[0].is_finite(), w[1].is_finite()) {
                    (true, true) => 0.5 * (w[0] + w[1]),
                    (false, true) => w[1] - 1.0,
                    (true, false) => w[0] + 1.0,
                    (false, false) => 0.0,
                };
                (w[0], w[1], self.classify(&[rep]))
            })
            .collect()
    }
}

impl BaseModel for CompositeModel {
    fn classify(&self, x: &[f64]) -> usize {
        self.regions
            .iter()
            .find(|r| r.region.contains(x))
            .map_or(self.default_label, |r| r.label)
    }

    fn num_classes(&self) -> usize {
        self.num_classes.unwrap_or(self.max_label() + 1)
    }

    fn dimension(&self) -> usize {
        self.resolved_dimension().unwrap_or(1)
    }

    /// Closed form for the constant classifier in any dimension and for
    /// arbitrary region lists on the real line.
    fn gaussian_mass(&self, x: &[f64], sigma: Sigma, label: usize) -> Option<GaussianMass> {
        if self.regions.is_empty() {
            return Some(if label == self.default_label {
                GaussianMass::everything()
            } else {
                GaussianMass::nothing()
            });
        }
        if self.dimension() != 1 {
            return None;
        }
        let t = x[0];
        let s = sigma.value();
        let mut mass = 0.0;
        let mut complement = 0.0;
        let mut boundary_distance = f64::INFINITY;
        for (lo, hi, seg_label) in self.segments_1d() {
            let m = interval_measure(lo, hi, t, s);
            if seg_label == label {
                mass += m;
            } else {
                complement += m;
                boundary_distance = boundary_distance.min(interval_distance(lo, hi, t));
            }
        }
        Some(GaussianMass {
            mass: mass.min(1.0),
            complement: complement.min(1.0),
            boundary_distance,
        })
    }
}

/// Serializable model configuration: `{"type": "linear" | "ball" | "composite", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Ball(BallModel),
    Composite(CompositeModel),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Linear(m) => m.validate(),
            Model::Ball(m) => m.validate(),
            Model::Composite(m) => m.validate(),
        }
    }

    fn inner(&self) -> &dyn BaseModel {
        match self {
            Model::Linear(m) => m,
            Model::Ball(m) => m,
            Model::Composite(m) => m,
        }
    }
}

impl BaseModel for Model {
    fn classify(&self, x: &[f64]) -> usize {
        self.inner().classify(x)
    }

    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn dimension(&self) -> usize {
        self.inner().dimension()
    }

    fn gaussian_mass(&self, x: &[f64], sigma: Sigma, label: usize) -> Option<GaussianMass> {
        self.inner().gaussian_mass(x, sigma, label)
    }
}

/// A shared base model together with its forward-pass counter.
///
/// All sampling goes through this handle so that every classifier
/// evaluation on a noisy input is accounted for.
#[derive(Debug)]
pub struct Classifier {
    model: Arc<dyn BaseModel>,
    passes: AtomicU64,
}

impl Classifier {
    pub fn new<M: BaseModel + 'static>(model: M) -> Self {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(model: Arc<dyn BaseModel>) -> Self {
        Classifier {
            model,
            passes: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &dyn BaseModel {
        self.model.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    /// Total forward passes issued through this handle so far.
    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::SeqCst)
    }

    /// Counts the predicted class of `x + eps_i` over draws
    /// `eps_i ~ N(0, sigma^2 I)`, `i = 0..n`, of the stream keyed by `seed`.
    pub fn sample_class_counts(&self, x: &[f64], sigma: Sigma, n: u64, seed: u64) -> Result<Vec<u64>> {
        check_dim(self.model(), x)?;
        if n == 0 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        let classes = self.model.num_classes();
        let stream = NoiseStream::new(seed, x.len());
        let s = sigma.value();
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        let counts = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * SAMPLE_CHUNK;
                let len = SAMPLE_CHUNK.min(n - start);
                let mut local = vec![0_u64; classes];
                let mut point = vec![0.0; x.len()];
                stream.for_each(start, len, |_, z| {
                    for ((p, xi), zi) in point.iter_mut().zip(x).zip(z) {
                        *p = xi + s * zi;
                    }
                    let label = self.model.classify(&point);
                    local[label] += 1;
                });
                local
            })
            .reduce(
                || vec![0_u64; classes],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        self.passes.fetch_add(n, Ordering::SeqCst);
        Ok(counts)
    }
}

/// Exact smoothed probability of `label` at `x`.
pub fn exact_pa(model: &dyn BaseModel, x: &[f64], sigma: Sigma, label: usize) -> Result<Probability> {
    check_dim(model, x)?;
    let mass = model.gaussian_mass(x, sigma, label).ok_or_else(|| {
        Error::Unsupported(format!(
            "no closed-form smoothed probability for {model:?}; use brute_force_pa"
        ))
    })?;
    Probability::new(mass.mass.clamp(0.0, 1.0))
}

/// Exact smoothed prediction: the top class, its probability and the
/// radius `sigma * quantile(p_A)` it would certify with a perfect estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPrediction {
    pub label: usize,
    pub pa: Probability,
    pub radius: Radius,
}

pub fn exact_prediction(model: &dyn BaseModel, x: &[f64], sigma: Sigma) -> Result<ExactPrediction> {
    check_dim(model, x)?;
    let mut best: Option<(usize, GaussianMass)> = None;
    for label in 0..model.num_classes() {
        let mass = model.gaussian_mass(x, sigma, label).ok_or_else(|| {
            Error::Unsupported(format!(
                "no closed-form smoothed probability for {model:?}; use brute_force_pa"
            ))
        })?;
        if best.is_none_or(|(_, b)| mass.mass > b.mass) {
            best = Some((label, mass));
        }
    }
    let (label, mass) = best.expect("models have at least one class");
    Ok(ExactPrediction {
        label,
        pa: Probability::new(mass.mass.clamp(0.0, 1.0))?,
        radius: mass.radius(sigma),
    })
}

/// High-sample Monte Carlo estimate of the smoothed probability of `label`,
/// on a stream independent of every certification stream. Its standard
/// error is at most `sqrt(0.25 / n_oracle)`.
pub fn brute_force_pa(
    clf: &Classifier,
    x: &[f64],
    sigma: Sigma,
    label: usize,
    n_oracle: u64,
    seed: u64,
) -> Result<Probability> {
    let counts = clf.sample_class_counts(x, sigma, n_oracle, derive_seed(seed, &[ORACLE_TAG]))?;
    let hits = counts.get(label).copied().unwrap_or(0);
    Probability::new(hits as f64 / n_oracle as f64)
}
