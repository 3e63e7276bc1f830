//! Portable seeded randomness.
//!
//! The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
//! filled from the 64-bit seed by four successive SplitMix64 outputs. Derived
//! draws use only the raw 64-bit outputs, so every sequence can be replayed
//! bit-for-bit from another language:
//!
//! - `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform in `[0, 1)`.
//! - `below(m)`: rejection sampling on `next_u64() % m`, rejecting draws at or
//!   above the largest multiple of `m` that fits in 64 bits.
//! - `normal(mean, sd)`: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; the
//!   sine half is discarded so each call consumes exactly two outputs.
//! - `exponential(scale)`: inverse CDF, `-scale * ln(1 - u)`.

use serde::{Deserialize, Serialize};

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag into an independent seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut s = base ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    s: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, m)`. Panics if `m == 0`.
    pub fn below(&mut self, m: u64) -> u64 {
        assert!(m > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % m);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % m;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        match (hi - lo).checked_add(1) {
            Some(span) => lo + self.below(span),
            None => self.next_u64(),
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        mean + sd * r * (std::f64::consts::TAU * u2).cos()
    }

    pub fn exponential(&mut self, scale: f64) -> f64 {
        -scale * (1.0 - self.next_f64()).ln()
    }
}
