//! Seeded generator used for every shuffle and resample in the toolkit.
//!
//! The algorithm is fixed so that other implementations can reproduce splits
//! exactly:
//!
//! * state initialisation: one SplitMix64 step applied to the user seed
//!   (`state = seed + 0x9E3779B97F4A7C15`, then the SplitMix64 finaliser);
//!   a zero result is replaced by `0x9E3779B97F4A7C15`.
//! * output: xorshift64* with shifts (12, 25, 27) and multiplier
//!   `0x2545F4914F6CDD1D`.
//! * `below(n)`: `next_u64() % n`.
//! * `shuffle`: Fisher-Yates from the last element down, swapping `i` with
//!   `below(i + 1)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(GOLDEN);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        XorShift64Star {
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

    /// Value in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
