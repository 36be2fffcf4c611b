//! Deterministic random numbers via SplitMix64.
//!
//! Instance sets, parameter initialization and sampling all draw from this
//! generator, so any artifact produced from a seed reproduces bit-for-bit on
//! every platform. The scheme is Steele/Lea/Flood's SplitMix64: a 64-bit
//! counter advanced by the golden-ratio increment, finalized with two
//! xor-shift multiplies. Doubles take the top 53 bits of one output.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream for a labeled sub-task. Mixing the label
    /// through one SplitMix64 round keeps distinct labels decorrelated.
    pub fn derive(&self, label: u64) -> Rng {
        let mut r = Rng::new(self.state ^ mix(label.wrapping_add(GOLDEN_GAMMA)));
        r.state = r.state.wrapping_add(mix(label));
        r
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform double in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    /// tiny compared to 2^64, bias is unobservable at our scales, and the
    /// result stays portable.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
