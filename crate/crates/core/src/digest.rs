//! Content hashing for parameter tensors. Digest equality means bitwise
//! identical values, shapes and names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDigest {
    pub per_tensor: BTreeMap<String, String>,
    pub global: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of one tensor: shape extents then raw little-endian f64 payload.
pub fn digest_tensor(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for e in t.shape() {
        h.update((*e as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Digest over a named parameter listing. Entries are hashed in sorted
/// name order, so any listing order produces the same digest.
pub fn digest_named(entries: &[(String, &Tensor)]) -> ParamDigest {
    let per_tensor: BTreeMap<String, String> = entries
        .iter()
        .map(|(name, t)| (name.clone(), digest_tensor(t)))
        .collect();
    let mut h = Sha256::new();
    for (name, hash) in &per_tensor {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(hash.as_bytes());
        h.update([0u8]);
    }
    ParamDigest {
        per_tensor,
        global: hex(&h.finalize()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_bit_sensitive() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        let base = digest_named(&[("w".to_string(), &a)]);
        b.data_mut()[0] = 1.0 + f64::EPSILON;
        let changed = digest_named(&[("w".to_string(), &b)]);
        assert_ne!(base.global, changed.global);
    }

    #[test]
    fn listing_order_is_irrelevant() {
        let a = Tensor::vector(vec![1.0]);
        let b = Tensor::vector(vec![2.0]);
        let d1 = digest_named(&[("a".into(), &a), ("b".into(), &b)]);
        let d2 = digest_named(&[("b".into(), &b), ("a".into(), &a)]);
        assert_eq!(d1, d2);
    }

    #[test]
    fn shape_participates_in_hash() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        assert_ne!(digest_tensor(&a), digest_tensor(&b));
    }
}
