//! Append-only, hash-chained, signed audit log.
//!
//! Entry `n` links to entry `n-1` through `prev_hash`; entry 0 links to the
//! zero hash. Each entry carries the hash of its payload (a canonically
//! encoded protocol event) and a signature over the canonical entry header.
//! On disk, each line is the base64 of one canonical [`AuditRecord`].

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, RwLock};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::hash::{sha256, Digest};
use super::signing::{verify, PublicKey, Signature, SigningIdentity};
use crate::canonical;
use crate::domain::ParticipantId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Signer {
    Server,
    Participant(ParticipantId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub kind: String,
    pub payload_hash: Digest,
    pub prev_hash: Digest,
    pub signer: Signer,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SignedHeader<'a> {
    seq: u64,
    kind: &'a str,
    payload_hash: &'a Digest,
    prev_hash: &'a Digest,
    signer: &'a Signer,
}

impl AuditEntry {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(&SignedHeader {
            seq: self.seq,
            kind: &self.kind,
            payload_hash: &self.payload_hash,
            prev_hash: &self.prev_hash,
            signer: &self.signer,
        })
    }

    /// Hash linking the next entry to this one; covers the signature too.
    pub fn entry_hash(&self) -> Digest {
        sha256(&canonical::to_bytes(self))
    }
}

/// An entry together with the event payload it commits to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub entry: AuditEntry,
    pub payload: Vec<u8>,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(canonical::to_bytes(self))
    }

    pub fn from_line(line: &[u8]) -> Result<Self, AuditError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(line)
            .map_err(|e| AuditError::Decode(e.to_string()))?;
        canonical::from_bytes(&bytes).map_err(|e| AuditError::Decode(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("out-of-order append: expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("appended entry does not link to the current head")]
    BrokenLink,
    #[error("undecodable record: {0}")]
    Decode(String),
    #[error("audit file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainVerdict {
    Ok,
    /// Lowest sequence number whose link, payload hash, signature or
    /// encoding fails to verify.
    FirstBrokenSeq(u64),
}

impl ChainVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainVerdict::Ok)
    }
}

/// Verifies links, payload hashes and signatures of a record sequence.
pub fn verify_chain<F>(records: &[AuditRecord], resolve: F) -> ChainVerdict
where
    F: Fn(&Signer) -> Option<PublicKey>,
{
    let mut prev = Digest::ZERO;
    for (i, rec) in records.iter().enumerate() {
        let seq = i as u64;
        let e = &rec.entry;
        let ok = e.seq == seq
            && e.prev_hash == prev
            && e.payload_hash == sha256(&rec.payload)
            && resolve(&e.signer)
                .map(|pk| verify(&pk, &e.signing_bytes(), &e.signature))
                .unwrap_or(false);
        if !ok {
            return ChainVerdict::FirstBrokenSeq(seq);
        }
        prev = e.entry_hash();
    }
    ChainVerdict::Ok
}

/// Parses the on-disk text form. A line that fails to decode (or a final
/// line missing its newline) is reported as broken at its line index;
/// everything before it is returned.
pub fn parse_log_bytes(bytes: &[u8]) -> (Vec<AuditRecord>, Option<u64>) {
    let mut out = Vec::new();
    if bytes.is_empty() {
        return (out, None);
    }
    let (body, complete) = match bytes.strip_suffix(b"\n") {
        Some(b) => (b, true),
        None => (bytes, false),
    };
    let lines: Vec<&[u8]> = body.split(|&b| b == b'\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if !complete && i + 1 == lines.len() {
            return (out, Some(i as u64));
        }
        match AuditRecord::from_line(line) {
            Ok(r) => out.push(r),
            Err(_) => return (out, Some(i as u64)),
        }
    }
    (out, None)
}

/// Verifies a log in its on-disk text form.
pub fn verify_log_bytes<F>(bytes: &[u8], resolve: F) -> ChainVerdict
where
    F: Fn(&Signer) -> Option<PublicKey>,
{
    let (records, broken_line) = parse_log_bytes(bytes);
    match verify_chain(&records, resolve) {
        ChainVerdict::FirstBrokenSeq(s) => ChainVerdict::FirstBrokenSeq(s),
        ChainVerdict::Ok => match broken_line {
            Some(s) => ChainVerdict::FirstBrokenSeq(s),
            None => ChainVerdict::Ok,
        },
    }
}

pub fn read_log_file(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let bytes = std::fs::read(path)?;
    let (records, broken) = parse_log_bytes(&bytes);
    match broken {
        Some(line) => Err(AuditError::Decode(format!("line {line}"))),
        None => Ok(records),
    }
}

/// The single writer of a log. Readers obtained via [`AuditLog::reader`]
/// observe a consistent prefix and may verify concurrently with appends.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Arc<RwLock<Vec<AuditRecord>>>,
    sink: Option<File>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) an append-only file sink, loading existing records.
    pub fn open_file(path: &Path) -> Result<Self, AuditError> {
        let existing = if path.exists() {
            read_log_file(path)?
        } else {
            Vec::new()
        };
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Arc::new(RwLock::new(existing)),
            sink: Some(sink),
        })
    }

    pub fn len(&self) -> u64 {
        self.read().len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_hash(&self) -> Digest {
        self.read()
            .last()
            .map(|r| r.entry.entry_hash())
            .unwrap_or(Digest::ZERO)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vec<AuditRecord>> {
        self.records.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Builds, signs and appends the next entry for `payload`.
    pub fn append(
        &mut self,
        kind: &str,
        payload: Vec<u8>,
        signer: Signer,
        key: &SigningIdentity,
    ) -> Result<AuditEntry, AuditError> {
        let mut entry = AuditEntry {
            seq: self.len(),
            kind: kind.to_string(),
            payload_hash: sha256(&payload),
            prev_hash: self.head_hash(),
            signer,
            signature: Signature::default(),
        };
        entry.signature = key.sign(&entry.signing_bytes());
        self.append_record(AuditRecord {
            entry: entry.clone(),
            payload,
        })?;
        Ok(entry)
    }

    /// Appends a pre-built record, rejecting out-of-order sequence numbers
    /// and records that do not link to the current head.
    pub fn append_record(&mut self, record: AuditRecord) -> Result<(), AuditError> {
        let expected = self.len();
        if record.entry.seq != expected {
            return Err(AuditError::OutOfOrder {
                expected,
                got: record.entry.seq,
            });
        }
        if record.entry.prev_hash != self.head_hash() {
            return Err(AuditError::BrokenLink);
        }
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", record.to_line())?;
            sink.flush()?;
        }
        self.records
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .push(record);
        Ok(())
    }

    pub fn reader(&self) -> AuditReader {
        AuditReader {
            records: Arc::clone(&self.records),
        }
    }

    pub fn snapshot(&self) -> Vec<AuditRecord> {
        self.read().clone()
    }

    /// Text form of the whole log, identical to the file sink's contents.
    pub fn to_text(&self) -> String {
        self.read()
            .iter()
            .map(|r| r.to_line() + "\n")
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AuditReader {
    records: Arc<RwLock<Vec<AuditRecord>>>,
}

impl AuditReader {
    pub fn snapshot_from(&self, from: u64) -> Vec<AuditRecord> {
        let guard = self.records.read().unwrap_or_else(|e| e.into_inner());
        guard.iter().skip(from as usize).cloned().collect()
    }

    pub fn verify<F>(&self, resolve: F) -> ChainVerdict
    where
        F: Fn(&Signer) -> Option<PublicKey>,
    {
        verify_chain(&self.snapshot_from(0), resolve)
    }
}
