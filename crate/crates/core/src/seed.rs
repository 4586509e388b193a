//! Deterministic seed derivation for repeats and sub-generators.

/// SplitMix64 finalizer over `base` and `stream`. Distinct `stream` values
/// give statistically independent seeds for the same `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams_differ() {
        let a = derive(7, 0);
        assert_ne!(a, derive(7, 1));
        assert_ne!(a, derive(8, 0));
        assert_eq!(a, derive(7, 0));
    }
}
