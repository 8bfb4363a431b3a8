//! Deterministic pseudo-randomness for every seeded operation.
//!
//! All shuffles, subsamples, and synthetic draws flow through [`SplitMix64`],
//! a 64-bit counter-based generator: the state advances by a fixed Weyl
//! increment and each output is a finalizer hash of the counter. It has a
//! full 2^64 period and, unlike thread or OS randomness, produces the same
//! stream on every platform, so seeded runs reproduce bit-for-bit.
//!
//! Independent substreams are derived by hashing a purpose label into the
//! base seed ([`derive_stream`]), which keeps operations (balancing,
//! splitting, hyperplane draws, ...) decoupled: adding a draw to one never
//! shifts another.

/// SplitMix64 generator (Steele, Lea & Flood's finalizer over a Weyl sequence).
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1): the 53 high bits scaled by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) via 128-bit multiply-shift.
    ///
    /// The residual bias is below n/2^64, far under anything the test
    /// suite's chi-squared tolerances can see.
    pub fn gen_range(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Approximate standard normal: Irwin-Hall sum of 12 uniforms minus 6.
    ///
    /// Uses only IEEE add/sub, so the draw is bit-identical across
    /// platforms. Tails truncate at +/-6 sigma, which is irrelevant for
    /// random projection directions.
    pub fn next_gaussian_ih(&mut self) -> f64 {
        let mut sum = 0.0;
        for _ in 0..12 {
            sum += self.next_f64();
        }
        sum - 6.0
    }

    /// Standard normal via Box-Muller; exact marginals, used where test
    /// statistics are sensitive to tail shape.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Stable 64-bit FNV-1a. `std`'s `DefaultHasher` is not guaranteed stable
/// across releases; this one is part of the on-disk determinism contract.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01B3);
    }
    h
}

/// Mix a list of words into one via the SplitMix64 finalizer chain.
pub fn mix(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h ^= w;
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Independent substream for `label` under a base seed.
pub fn derive_stream(seed: u64, label: &str) -> SplitMix64 {
    SplitMix64::new(mix(&[seed, fnv1a(label.as_bytes())]))
}
