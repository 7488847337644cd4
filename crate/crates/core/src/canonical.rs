//! Canonical binary encoding.
//!
//! Every record is one schema-version byte followed by a field-ordered body:
//! little-endian fixed-width integers, `u64` length prefixes on sequences and
//! UTF-8 strings, `u32` enum discriminants, IEEE-754 bit patterns for floats.
//! These bytes are the preimage for every commitment, signature and audit
//! hash, so maps inside encoded types must be ordered (`BTreeMap`).

use bincode::Options;
use serde::{de::DeserializeOwned, Serialize};

/// Version byte prefixed to every canonical record.
pub const SCHEMA_VERSION: u8 = 1;

/// Names of the fixed primitives, recorded in the genesis audit entry and in
/// every publication manifest.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SchemaHeader {
    pub version: u8,
    pub hash: String,
    pub signature: String,
    pub encoding: String,
}

impl Default for SchemaHeader {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            hash: "sha-256".into(),
            signature: "ed25519".into(),
            encoding: "v1-le-fixint-u64len".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("empty record")]
    Empty,
    #[error("unsupported schema version {0}")]
    Version(u8),
    #[error("malformed record body: {0}")]
    Body(#[from] bincode::Error),
}

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_fixint_encoding()
        .with_little_endian()
        .reject_trailing_bytes()
}

/// Encodes `value` canonically, including the schema byte.
pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = vec![SCHEMA_VERSION];
    // Serialization into a Vec only fails for types serde cannot represent
    // (e.g. maps with non-string keys are fine in bincode), so this is total.
    options()
        .serialize_into(&mut out, value)
        .expect("canonical encoding of an in-memory value");
    out
}

/// Decodes a canonical record, rejecting unknown versions and trailing bytes.
pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let (&version, body) = bytes.split_first().ok_or(CanonicalError::Empty)?;
    if version != SCHEMA_VERSION {
        return Err(CanonicalError::Version(version));
    }
    Ok(options().deserialize(body)?)
}
