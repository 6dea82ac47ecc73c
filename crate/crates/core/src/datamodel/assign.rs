//! Deterministic hash bucketing of users into variants.
//!
//! Experiments sharing a `hash_id` assign every user to the same bucket, so
//! dependent experiments see identical splits and checks can recover the
//! variant of users that never fired an exposure event.

use sha2::{Digest, Sha256};

use super::VariantAllocation;

/// Maps (hash_id, user_id) to a uniform fraction in [0, 1).
pub fn bucket_fraction(hash_id: &str, user_id: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(hash_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user_id.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let x = u64::from_be_bytes(bytes);
    // 53-bit mantissa keeps the fraction exactly representable.
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Assigns a user to a variant by walking cumulative allocation fractions.
pub fn assign_variant<'a>(
    hash_id: &str,
    variants: &'a [VariantAllocation],
    user_id: &str,
) -> &'a str {
    let x = bucket_fraction(hash_id, user_id);
    let mut acc = 0.0;
    for v in variants {
        acc += v.fraction;
        if x < acc {
            return &v.label;
        }
    }
    // Rounding in the cumulative sum can leave the last sliver uncovered.
    &variants[variants.len() - 1].label
}
