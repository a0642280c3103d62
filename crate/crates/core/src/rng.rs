//! Counter-based deterministic random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`:
//!
//! ```text
//! key    = mix64(seed ^ mix64(stream + GOLDEN))
//! out(i) = mix64(key + (i + 1) * GOLDEN)
//! ```
//!
//! `mix64` is the SplitMix64 finalizer and `GOLDEN = 0x9E3779B97F4A7C15`, so a
//! single stream reproduces SplitMix64 seeded with `key`. Streams are derived
//! from tile indices or hashed tile ids, which keeps parallel work reproducible
//! regardless of scheduling. Strings hash with 64-bit FNV-1a.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ mix64(stream.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    /// Stream keyed by several words, e.g. `(tile hash, y, x)`.
    pub fn keyed(seed: u64, words: &[u64]) -> Self {
        let stream = words
            .iter()
            .fold(0u64, |acc, w| mix64(acc.wrapping_add(GOLDEN) ^ *w));
        CounterRng::new(seed, stream)
    }

    /// Draw `i` of this stream, independent of the cursor.
    pub fn at(&self, i: u64) -> u64 {
        mix64(self.key.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n` without modulo bias. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
