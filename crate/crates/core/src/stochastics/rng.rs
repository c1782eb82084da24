//! Counter-keyed Gaussian increments: the normals for `(seed, path, step)`
//! come from the ChaCha8 stream `path` of key `seed` at a fixed word offset,
//! so any increment can be regenerated independently of scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit words consumed per Box–Muller pair.
const WORDS_PER_PAIR: u128 = 4;

pub struct IncrementStream {
    rng: ChaCha8Rng,
    dim: usize,
}

impl IncrementStream {
    pub fn new(seed: u64, path: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng, dim }
    }

    /// Positions the stream at the start of `step`.
    pub fn seek(&mut self, step: u64) {
        let pairs = self.dim.div_ceil(2) as u128;
        self.rng.set_word_pos(step as u128 * pairs * WORDS_PER_PAIR);
    }

    fn uniform(&mut self) -> f64 {
        // (0, 1]
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    fn pair(&mut self) -> (f64, f64) {
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.uniform();
        let (s, c) = theta.sin_cos();
        (r * c, r * s)
    }

    /// Standard normals for the next step, `dim` of them. An odd dimension
    /// discards the second value of the last pair so every step uses the
    /// same number of words.
    pub fn next_step(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut i = 0;
        while i < self.dim {
            let (a, b) = self.pair();
            out[i] = a;
            if i + 1 < self.dim {
                out[i + 1] = b;
            }
            i += 2;
        }
    }
}

/// Standard normals for one `(seed, path, step)` triple.
pub fn normals_at(seed: u64, path: u64, step: u64, dim: usize) -> Vec<f64> {
    let mut s = IncrementStream::new(seed, path, dim);
    s.seek(step);
    let mut out = vec![0.0; dim];
    s.next_step(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        for dim in [1, 2, 3] {
            let mut s = IncrementStream::new(7, 3, dim);
            let mut z = vec![0.0; dim];
            for step in 0..5 {
                s.next_step(&mut z);
                assert_eq!(z, normals_at(7, 3, step, dim));
            }
        }
    }

    #[test]
    fn streams_differ() {
        assert_ne!(normals_at(1, 0, 0, 2), normals_at(1, 1, 0, 2));
        assert_ne!(normals_at(1, 0, 0, 2), normals_at(2, 0, 0, 2));
    }

    #[test]
    fn moments_are_standard() {
        let mut s = IncrementStream::new(11, 0, 2);
        let mut z = [0.0; 2];
        let n = 200_000;
        let (mut m1, mut m2, mut cross) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            s.next_step(&mut z);
            m1 += z[0];
            m2 += z[0] * z[0];
            cross += z[0] * z[1];
        }
        let n = n as f64;
        assert!((m1 / n).abs() < 4.0 / n.sqrt());
        assert!((m2 / n - 1.0).abs() < 0.02);
        assert!((cross / n).abs() < 4.0 / n.sqrt());
    }
}
