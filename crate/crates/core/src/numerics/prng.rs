use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator.
///
/// Every randomized decision in the crate (initialization, shuffles, dropout
/// masks, set assignment) draws from one of these, so a seed fixes the whole
/// run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent generator for a numbered sub-stream of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut base = Prng::new(seed ^ stream.wrapping_mul(GOLDEN_GAMMA).rotate_left(17));
        Prng::new(base.next_u64() ^ stream)
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n`, rejecting the biased tail of the `u64` range.
    pub fn uniform(&mut self, n: u64) -> u64 {
        assert!(n > 0, "uniform(0) has no values");
        // 2^64 mod n
        let tail = (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= u64::MAX - tail {
                return x % n;
            }
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.uniform(n as u64) as usize
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Child generator seeded from this one's next output.
    pub fn fork(&mut self) -> Prng {
        Prng::new(self.next_u64())
    }
}
