//! Independent reference implementations and fixtures for the integration
//! tests. Nothing here calls into the crate's numeric kernels.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Test-side RNG for generating fixtures.
pub struct Fixture(ChaCha20Rng);

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Fixture(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Binomial draw by summing Bernoulli trials.
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        (0..n).filter(|_| self.uniform() < p).count() as u64
    }
}

/// erf by its Maclaurin series; used only for |x| <= 1 where cancellation
/// is negligible.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    let mut n = 0.0;
    loop {
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        n += 1.0;
        term *= -x * x / n;
    }
    2.0 / PI.sqrt() * sum
}

/// erfc by Lentz's continued fraction, for x > 1.
fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..100_000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / PI.sqrt() / f
}

/// Standard normal CDF from the series/continued-fraction pair.
pub fn phi(z: f64) -> f64 {
    let x = z / 2f64.sqrt();
    if x.abs() <= 1.0 {
        0.5 * (1.0 + erf_series(x))
    } else if x > 0.0 {
        1.0 - 0.5 * erfc_cf(x)
    } else {
        0.5 * erfc_cf(-x)
    }
}

/// Normal quantile by bisection on [`phi`].
pub fn phi_inv(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `Pr[Binomial(n, p) >= k]` by direct summation of every term.
pub fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    let mut lf = vec![0.0; n as usize + 1];
    for i in 2..=n as usize {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    (k..=n)
        .map(|j| {
            let j_ = j as usize;
            (lf[n as usize] - lf[j_] - lf[n as usize - j_] + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
        })
        .sum()
}

/// Clopper-Pearson lower bound by bisection on [`upper_tail`].
pub fn cp_lower(k: u64, n: u64, alpha: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if upper_tail(k, n, mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Exact d=1 ball mass `Pr[|x + sigma Z - c| <= rho]`.
pub fn ball_mass_1d(c: f64, rho: f64, x: f64, sigma: f64) -> f64 {
    phi((c + rho - x) / sigma) - phi((c - rho - x) / sigma)
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// 100-point two-dimensional dataset for the linear model `x0 >= 0 -> 1`,
/// with margins uniform in [0.1, 1.0].
pub fn linear_fixture(dir: &Path, points: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let model = dir.join("model.json");
    write(
        &model,
        r#"{"type":"linear","w":[1.0,0.0],"b":0.0,"positive_label":1,"negative_label":0}"#,
    );
    let mut rng = Fixture::new(seed);
    let mut text = String::new();
    for i in 0..points {
        let margin = rng.range(0.1, 1.0);
        let side = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
        let y = rng.range(-2.0, 2.0);
        let label = if side > 0.0 { 1 } else { 0 };
        text.push_str(&format!(
            "{{\"id\":\"p{i:03}\",\"x\":[{},{}],\"label\":{label}}}\n",
            side * margin,
            y
        ));
    }
    let data = dir.join("data.jsonl");
    write(&data, &text);
    (model, data)
}

/// A strictly quasiconcave curve symmetric about `peak`:
/// `base + height * g(|s - peak| / width)` with `g` strictly decreasing.
#[derive(Debug, Clone, Copy)]
pub struct PeakCurve {
    pub peak: f64,
    pub height: f64,
    pub width: f64,
    pub base: f64,
    pub shape: u8,
}

impl PeakCurve {
    pub fn random(rng: &mut Fixture, lo: f64, hi: f64) -> Self {
        PeakCurve {
            peak: rng.range(lo, hi),
            height: rng.range(0.2, 2.0),
            width: rng.range(0.05, 0.6),
            base: rng.range(0.0, 0.3),
            shape: (rng.uniform() * 4.0) as u8,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let u = (s - self.peak).abs() / self.width;
        let g = match self.shape {
            0 => 1.0 / (1.0 + u * u),
            1 => (-u * u).exp(),
            2 => 1.0 / (1.0 + u),
            _ => 1.0 / u.cosh(),
        };
        self.base + self.height * g
    }
}
