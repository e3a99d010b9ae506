//! Dataset PRNG.
//!
//! xoshiro256** seeded through SplitMix64 (the reference seeding procedure of
//! the xoshiro authors). Derived draws are defined on top of the raw 64-bit
//! stream so that any implementation of the generator reproduces them:
//!
//! * `unit()`: `(next >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * `below(n)`: Lemire's multiply-shift with rejection, uniform in `[0, n)`.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Clone, Debug)]
pub struct DatasetRng(Xoshiro256StarStar);

impl DatasetRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let mut m = self.next_u64() as u128 * n as u128;
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = self.next_u64() as u128 * n as u128;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform integer in `[-bound, bound]`.
    pub fn symmetric(&mut self, bound: u32) -> i32 {
        self.below(2 * bound as u64 + 1) as i32 - bound as i32
    }
}
