//! Small shared helpers: seed derivation, categorical sampling, entropy.

use rand::Rng;

use crate::field::Symbol;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent sub-seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5eed)))
}

/// Inverse-CDF draw from an (approximately) normalized distribution.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Shannon entropy in nats.
pub fn entropy_nats(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Entropy normalized by `ln q`, so that it lies in `[0, 1]`.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    let q = p.len();
    if q < 2 {
        return 0.0;
    }
    (entropy_nats(p) / (q as f64).ln()).clamp(0.0, 1.0)
}

/// Relative slack under which two probabilities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Most likely symbol; near-ties go to the smallest field element.
pub fn argmax_smallest(p: &[f64]) -> Symbol {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = max - max.abs() * TIE_TOLERANCE;
    p.iter().position(|&x| x >= cut).unwrap_or(0) as Symbol
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_entropy_at_point_eleven() {
        let h = normalized_entropy(&[0.89, 0.11]);
        let direct = -(0.11f64 * 0.11f64.log2() + 0.89 * 0.89f64.log2());
        assert!((h - direct).abs() < 1e-12);
        assert!((h - 0.4999).abs() < 1e-3);
    }

    #[test]
    fn argmax_ties_pick_smallest() {
        assert_eq!(argmax_smallest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_smallest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_smallest(&[0.1, 0.9]), 1);
        assert_eq!(argmax_smallest(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
