use sha2::{Digest as _, Sha256};

byte_newtype!(
    /// A 256-bit SHA-256 digest.
    Digest,
    32
);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hashes the plain concatenation of `parts`. Callers are responsible for
/// making the split points unambiguous (fixed widths or a trailing part).
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(
            sha256(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(hash_parts(&[b"a", b"bc"]), sha256(b"abc"));
    }

    #[test]
    fn hex_serde_in_json_raw_in_binary() {
        let d = sha256(b"x");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, format!("\"{}\"", d.to_hex()));
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
        let bin = crate::canonical::to_bytes(&d);
        assert_eq!(bin.len(), 33);
        assert_eq!(crate::canonical::from_bytes::<Digest>(&bin).unwrap(), d);
    }
}
