//! Sub-seed derivation.
//!
//! Every stochastic stream is seeded from one master seed. A stream is named
//! by a path of integers and a label (item id); the sub-seed is the SplitMix64
//! chain over the master seed, the FNV-1a hash of the label and each path
//! element in turn.

/// One SplitMix64 step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn derive(master: u64, label: &str, path: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ fnv1a(label));
    for p in path {
        s = splitmix64(s ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams() {
        let a = derive(42, "item", &[0, 1]);
        assert_eq!(a, derive(42, "item", &[0, 1]));
        assert_ne!(a, derive(42, "item", &[1, 0]));
        assert_ne!(a, derive(42, "other", &[0, 1]));
        assert_ne!(a, derive(43, "item", &[0, 1]));
    }
}
