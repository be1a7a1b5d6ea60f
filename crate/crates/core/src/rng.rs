//! Deterministic random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator keyed by `seed` and a path of labels such as `(case, replicate)`.
/// Equal keys give equal streams regardless of which thread asks.
pub fn substream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    for &l in labels {
        key = splitmix64(key ^ splitmix64(l.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    ChaCha8Rng::seed_from_u64(key)
}
