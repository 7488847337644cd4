//! Commitments, signatures, public randomness and the hash-chained audit log.
//!
//! One hash (SHA-256) and one signature scheme (Ed25519) are used everywhere;
//! their names travel in [`crate::canonical::SchemaHeader`].

pub mod audit;
pub mod beacon;
mod commitment;
mod hash;
mod signing;

pub use audit::{
    parse_log_bytes, AuditEntry, AuditLog, AuditReader, AuditRecord, ChainVerdict, Signer,
};
pub use beacon::{draw_reveal_subset, BeaconSchedule, RandomBeacon};
pub use commitment::{commit, verify_reveal, Commitment, Salt};
pub use hash::{hash_parts, sha256, Digest};
pub use signing::{verify, verify_canonical, PublicKey, Signature, SigningIdentity};
