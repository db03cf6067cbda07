//! The 64-bit linear congruential generator behind `random` initial data.
//!
//! State update `x <- 6364136223846793005 x + 1442695040888963407 (mod 2^64)`,
//! output `(x >> 11) / 2^53` in `[0, 1)`. The first output is produced after
//! one update of the seed.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Lcg {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[mean - amplitude, mean + amplitude)`.
    pub fn next_centered(&mut self, mean: f64, amplitude: f64) -> f64 {
        mean + amplitude * (2.0 * self.next_f64() - 1.0)
    }
}
