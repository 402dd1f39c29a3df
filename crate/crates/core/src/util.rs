use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used for every seeded stream in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Softmax restricted to `support`; every other index gets exactly zero.
pub fn masked_softmax(logits: &[f64], support: &[usize]) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    let max = support
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if support.is_empty() {
        return probs;
    }
    let mut sum = 0.0;
    for &i in support {
        let e = (logits[i] - max).exp();
        probs[i] = e;
        sum += e;
    }
    for &i in support {
        probs[i] /= sum;
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_softmax_zeroes_outside_support() {
        let p = masked_softmax(&[5.0, 0.0, 0.0, 9.0], &[1, 2]);
        assert_eq!(p, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
    }
}
