//! Counter-addressed Gaussian noise.
//!
//! Draw `i` of a stream is a pure function of `(seed, i)`: the ChaCha8
//! keystream is seeked to a fixed word offset per draw and Box-Muller
//! consumes a fixed number of words, so any partition of the draw range
//! across workers reproduces the same noise vectors bit for bit.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed.wrapping_add(GOLDEN_GAMMA)), |acc, &tag| {
        mix64(acc ^ mix64(tag.wrapping_add(GOLDEN_GAMMA)))
    })
}

/// Stable 64-bit FNV-1a hash, used to key per-point seeds by point id.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A reproducible stream of standard-normal vectors of fixed dimension.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    dim: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 1, "noise dimension must be positive");
        NoiseStream { seed, dim }
    }

    /// Keystream words (u32) consumed per draw.
    fn words_per_draw(&self) -> u128 {
        // Each Box-Muller pair reads two u64 words.
        4 * self.dim.div_ceil(2) as u128
    }

    /// Calls `f(index, noise)` for draws `start..start + count` in order.
    pub fn for_each(&self, start: u64, count: u64, mut f: impl FnMut(u64, &[f64])) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(start as u128 * self.words_per_draw());
        let pairs = self.dim.div_ceil(2);
        let mut buf = vec![0.0; 2 * pairs];
        for i in 0..count {
            for pair in buf.chunks_exact_mut(2) {
                let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
                pair[0] = z0;
                pair[1] = z1;
            }
            f(start + i, &buf[..self.dim]);
        }
    }

    /// The single noise vector for draw `index`.
    pub fn draw(&self, index: u64) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each(index, 1, |_, z| out.extend_from_slice(z));
        out
    }
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1] keeps the log finite.
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}
