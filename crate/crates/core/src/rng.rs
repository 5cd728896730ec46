//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded with a
//! 64-bit key. Keys are derived from a master seed, a purpose tag and a list
//! of indices (epoch, row id, sample number, ...) by chaining the splitmix64
//! finalizer, so each example owns an independent stream and results do not
//! depend on the order in which examples are processed or on thread count.
//!
//! Both the key derivation and the generator are part of the reproducibility
//! contract: changing either changes every trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags; kept distinct so streams used for different jobs never coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Split = 1,
    Init = 2,
    Shuffle = 3,
    Train = 4,
    Eval = 5,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive the key for `(seed, purpose, ids...)`.
pub fn derive_key(seed: u64, purpose: Purpose, ids: &[u64]) -> u64 {
    let mut key = splitmix64(seed ^ splitmix64(purpose as u64));
    for &id in ids {
        key = splitmix64(key ^ splitmix64(id.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    key
}

pub fn stream(seed: u64, purpose: Purpose, ids: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(7, Purpose::Train, &[1, 2]);
        let mut b = stream(7, Purpose::Train, &[1, 2]);
        for _ in 0..4 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn keys_separate_ids_purposes_and_seeds() {
        let base = derive_key(7, Purpose::Train, &[1, 2]);
        assert_ne!(base, derive_key(7, Purpose::Train, &[2, 1]));
        assert_ne!(base, derive_key(7, Purpose::Eval, &[1, 2]));
        assert_ne!(base, derive_key(8, Purpose::Train, &[1, 2]));
        assert_ne!(base, derive_key(7, Purpose::Train, &[1, 2, 0]));
    }
}
