//! Portable random streams.
//!
//! All randomness goes through ChaCha8 (`rand_chacha`) so that a seed
//! reproduces the same draws on every platform. Bounded integers use
//! rejection sampling on raw 64-bit outputs, and shuffles are a plain
//! Fisher–Yates pass from the last index down, so neither depends on
//! `rand`'s distribution internals.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent purposes drawing from the same global seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Negatives = 3,
    Split = 4,
    Synthetic = 5,
    Dropout = 6,
}

/// Stream for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Counter-keyed dropout stream: the mask for a given
/// `(seed, phase, epoch, batch, layer)` never depends on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub phase: u8,
    pub epoch: u32,
    pub batch: u32,
}

impl DropoutKey {
    pub fn rng(&self, layer: u8) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((Purpose::Dropout as u64) << 60));
        let stream = ((self.phase as u64) << 56)
            | (((self.epoch as u64) & 0xFFFF) << 40)
            | (((self.batch as u64) & 0xFFFF_FFFF) << 8)
            | layer as u64;
        rng.set_stream(stream);
        rng
    }
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `0..n` by rejection sampling. `n` must be positive.
pub fn below<R: RngCore + ?Sized>(rng: &mut R, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T, R: RngCore + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Standard normal via Box–Muller.
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = unit_f64(rng).max(f64::MIN_POSITIVE);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(42, Purpose::Split);
        let mut b = stream(42, Purpose::Split);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = stream(42, Purpose::Shuffle);
        let mut d = stream(42, Purpose::Split);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = stream(7, Purpose::Init);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let v = below(&mut r, 5) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<u32> = (0..100).collect();
        shuffle(&mut v, &mut stream(1, Purpose::Shuffle));
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn dropout_keys_differ_by_layer_and_batch() {
        let k = DropoutKey {
            seed: 42,
            phase: 0,
            epoch: 3,
            batch: 7,
        };
        let a = k.rng(0).next_u64();
        assert_eq!(a, k.rng(0).next_u64());
        assert_ne!(a, k.rng(1).next_u64());
        let k2 = DropoutKey { batch: 8, ..k };
        assert_ne!(a, k2.rng(0).next_u64());
    }
}
