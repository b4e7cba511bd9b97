//! Reproducible random source for workload generation.
//!
//! The generator is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`, O'Neill 2014)
//! seeded with `state = seed` and a fixed per-purpose `stream`. Every
//! derived draw is specified here so another implementation seeded the same
//! way produces the same stream:
//!
//! * `unit()`: `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * `below(n)`: rejection sampling; draws below `2^64 mod n` are discarded,
//!   then `x mod n`.
//! * `chance(p)`: `unit() < p`.
//! * `weighted(w)`: first index whose running sum exceeds `unit() * sum(w)`.
//! * `geometric(mean)`: `floor(ln(1 - unit()) / ln(1 - p))`, `p = 1 / (1 + mean)`,
//!   support `{0, 1, ...}`.
//! * `truncated_exp(mean, cap)`: inverse CDF of the exponential with the given
//!   mean, truncated to `[0, cap]`.

use rand_core::Rng;
use rand_pcg::Pcg64;

/// Stream used for the request stream and ground truth.
pub const EVENT_STREAM: u128 = 0x5E55_1010;
/// Separate stream for access-log noise, so noise settings never perturb events.
pub const NOISE_STREAM: u128 = 0x0EC1_F000;

#[derive(Debug, Clone)]
pub struct SimRng(Pcg64);

impl SimRng {
    pub fn new(seed: u64, stream: u128) -> Self {
        SimRng(Pcg64::new(u128::from(seed), stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let reject_under = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= reject_under {
                return x % n;
            }
        }
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.unit() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        // Rounding left the target at the very top; take the last non-zero weight.
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    pub fn geometric(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let p = 1.0 / (1.0 + mean);
        let u = 1.0 - self.unit();
        (u.ln() / (1.0 - p).ln()).floor() as u64
    }

    pub fn truncated_exp(&mut self, mean: f64, cap: f64) -> f64 {
        let u = self.unit();
        let mass = 1.0 - (-cap / mean).exp();
        (-mean * (1.0 - u * mass).ln()).min(cap)
    }
}
