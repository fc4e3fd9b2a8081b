//! Portable seeded pseudorandom numbers.
//!
//! Scene hashes must agree between this backend and any other client that
//! regenerates a city, so the generator is pinned to published formulas
//! instead of whatever a library happens to ship:
//!
//! * seeding: one SplitMix64 step over the 64-bit seed,
//!   `z = seed + 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ z>>27) * 0x94D049BB133111EB; state = z ^ z>>31`
//!   (a zero result is replaced by `0x9E3779B97F4A7C15`);
//! * update (xorshift64*): `x ^= x>>12; x ^= x<<25; x ^= x>>27;
//!   out = x * 0x2545F4914F6CDD1D` (wrapping);
//! * unit float: `(out >> 11) * 2^-53`, in `[0, 1)`;
//! * bounded integer in `[0, n)`: high 64 bits of the 128-bit product `out * n`;
//! * shuffle: Fisher-Yates from the last index down, `j = below(i + 1)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(GOLDEN);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self {
            state: if z == 0 { GOLDEN } else { z },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
