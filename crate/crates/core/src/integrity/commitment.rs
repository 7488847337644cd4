use serde::{Deserialize, Serialize};

use super::hash::{hash_parts, Digest};
use crate::canonical::SCHEMA_VERSION;

byte_newtype!(
    /// 16-byte hiding salt, kept private until publication.
    Salt,
    16
);

impl Salt {
    pub fn random<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Salt(bytes)
    }
}

/// Binding, hiding commitment `digest = H(payload || salt)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub digest: Digest,
    pub salt: Salt,
    pub schema_version: u8,
}

pub fn commit(payload: &[u8], salt: &Salt) -> Commitment {
    Commitment {
        digest: hash_parts(&[payload, salt.as_bytes()]),
        salt: *salt,
        schema_version: SCHEMA_VERSION,
    }
}

/// True iff `payload` and `salt` open `digest`.
pub fn verify_reveal(digest: &Digest, payload: &[u8], salt: &Salt) -> bool {
    commit(payload, salt).digest == *digest
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_verifies() {
        let salt = Salt([7; 16]);
        let a = commit(b"payload", &salt);
        let b = commit(b"payload", &salt);
        assert_eq!(a, b);
        assert!(verify_reveal(&a.digest, b"payload", &salt));
    }

    #[test]
    fn wrong_salt_or_payload_fails() {
        let salt = Salt([7; 16]);
        let c = commit(b"payload", &salt);
        assert!(!verify_reveal(&c.digest, b"payload", &Salt([8; 16])));
        assert!(!verify_reveal(&c.digest, b"paylaod", &salt));
    }

    proptest! {
        #[test]
        fn any_single_bit_flip_changes_digest(
            payload in proptest::collection::vec(any::<u8>(), 1..64),
            salt in any::<[u8; 16]>(),
            bit in any::<usize>(),
            flip_salt in any::<bool>(),
        ) {
            let salt = Salt(salt);
            let base = commit(&payload, &salt).digest;
            if flip_salt {
                let mut s = salt;
                s.0[(bit / 8) % 16] ^= 1 << (bit % 8);
                prop_assert_ne!(commit(&payload, &s).digest, base);
            } else {
                let mut p = payload.clone();
                let idx = (bit / 8) % p.len();
                p[idx] ^= 1 << (bit % 8);
                prop_assert_ne!(commit(&p, &salt).digest, base);
            }
        }
    }
}
