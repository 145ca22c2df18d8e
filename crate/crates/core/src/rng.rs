//! Seeded pseudo-random numbers with a fixed, documented algorithm.
//!
//! The generator is PCG-XSH-RR with 64-bit state and 32-bit output
//! (`pcg32`), initialised exactly like the reference `pcg32_srandom_r`
//! with `initstate = seed` and `initseq = STREAM`. Derived quantities:
//!
//! * `next_u64` = `(hi << 32) | lo` from two consecutive `next_u32` calls.
//! * `uniform` = `(next_u64 >> 11) * 2^-53`, in `[0, 1)`.
//! * `below(n)` = `next_u64 % n`.
//! * `shuffle` is Fisher-Yates from the last index down: for `i` in
//!   `(1..len).rev()`, swap `i` with `below(i + 1)`.
//!
//! See `docs/rng.md` for a reference implementation in pseudocode.

use rand_core::RngCore;
use rand_pcg::Pcg32;

/// Stream selector shared by every generator in the crate.
pub const STREAM: u64 = 0xda3e_39cb_94b9_5bdb;

#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: Pcg32,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg32::new(seed, STREAM),
        }
    }

    /// Independent generator for a named sub-task, so that adding draws in
    /// one place does not perturb another.
    pub fn derived(seed: u64, tag: &str) -> Self {
        Self::new(splitmix64(seed ^ fnv1a64(tag.as_bytes())))
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = u64::from(self.next_u32());
        let lo = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

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

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a. Also used by the hashing embedder.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_pcg32() {
        // pcg32_srandom_r(&rng, 42, 54) from the PCG reference distribution.
        let mut rng = Pcg32::new(42, 54);
        let got: Vec<u32> = (0..6).map(|_| rng.next_u32()).collect();
        assert_eq!(
            got,
            [0xa15c02b7, 0x7b47f409, 0xba1d3330, 0x83d2f293, 0xbfa4784b, 0xcbed606e]
        );
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = SeededRng::new(7);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_a_permutation_and_deterministic() {
        let mut a: Vec<usize> = (0..100).collect();
        let mut b = a.clone();
        SeededRng::new(3).shuffle(&mut a);
        SeededRng::new(3).shuffle(&mut b);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, sorted);
    }

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
