//! Identity key files and the encrypted salt vault.
//!
//! Identity files hold a hex Ed25519 secret and must not be readable by
//! group or others. Salts are kept by the contributor until publication,
//! encrypted with ChaCha20-Poly1305 under a key derived from the identity.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, AeadCore, KeyInit, OsRng, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use proctor_core::integrity::sha256;
use proctor_core::{Digest, Salt, SigningIdentity};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} already exists; pass --force to replace it")]
    Exists(PathBuf),
    #[error("{0} is accessible by group or others; restrict it to mode 0600")]
    TooOpen(PathBuf),
    #[error("{0} does not hold a valid identity key")]
    Malformed(PathBuf),
    #[error("salt vault {0} is corrupt or belongs to another identity")]
    Vault(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KeyError + '_ {
    move |source| KeyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a sibling temp file created with mode
/// 0600, so the content is never briefly world-readable.
pub fn write_private(path: &Path, bytes: &[u8]) -> Result<(), KeyError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("tmp");
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_identity(path: &Path, identity: &SigningIdentity, force: bool) -> Result<(), KeyError> {
    if path.exists() && !force {
        return Err(KeyError::Exists(path.to_path_buf()));
    }
    let text = hex::encode(identity.secret_bytes()) + "\n";
    write_private(path, text.as_bytes())
}

pub fn read_identity(path: &Path) -> Result<SigningIdentity, KeyError> {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(path).map_err(io_err(path))?.permissions().mode();
        if mode & 0o077 != 0 {
            return Err(KeyError::TooOpen(path.to_path_buf()));
        }
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut secret = [0u8; 32];
    hex::decode_to_slice(text.trim(), &mut secret).map_err(|_| KeyError::Malformed(path.to_path_buf()))?;
    Ok(SigningIdentity::from_secret(secret))
}

/// Domain-separated 32 bytes derived from an identity's secret.
pub fn derive_secret(identity: &SigningIdentity, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"proctor:");
    h.update(label.as_bytes());
    h.update(identity.secret_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct VaultFile {
    version: u32,
    /// Payload hash (hex) to nonce and ciphertext (hex).
    entries: BTreeMap<String, (String, String)>,
}

/// Salts by payload hash, encrypted at rest.
pub struct SaltVault {
    path: PathBuf,
    cipher: ChaCha20Poly1305,
    file: VaultFile,
}

impl SaltVault {
    /// The vault stored next to an identity file.
    pub fn path_for(identity_path: &Path) -> PathBuf {
        let mut name = identity_path.file_name().unwrap_or_default().to_os_string();
        name.push(".salts");
        identity_path.with_file_name(name)
    }

    pub fn open(path: &Path, identity: &SigningIdentity) -> Result<Self, KeyError> {
        let key = derive_secret(identity, "salt-vault");
        let file = match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|_| KeyError::Vault(path.to_path_buf()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => VaultFile {
                version: 1,
                ..VaultFile::default()
            },
            Err(e) => return Err(io_err(path)(e)),
        };
        Ok(Self {
            path: path.to_path_buf(),
            cipher: ChaCha20Poly1305::new(Key::from_slice(&key)),
            file,
        })
    }

    pub fn get(&self, payload_hash: &Digest) -> Result<Option<Salt>, KeyError> {
        let Some((nonce, ct)) = self.file.entries.get(&payload_hash.to_hex()) else {
            return Ok(None);
        };
        let corrupt = || KeyError::Vault(self.path.clone());
        let nonce = hex::decode(nonce).map_err(|_| corrupt())?;
        let ct = hex::decode(ct).map_err(|_| corrupt())?;
        if nonce.len() != 12 {
            return Err(corrupt());
        }
        let plain = self
            .cipher
            .decrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &ct,
                    aad: payload_hash.as_bytes(),
                },
            )
            .map_err(|_| corrupt())?;
        let bytes: [u8; 16] = plain.try_into().map_err(|_| corrupt())?;
        Ok(Some(Salt(bytes)))
    }

    pub fn insert(&mut self, payload_hash: &Digest, salt: &Salt) -> Result<(), KeyError> {
        let nonce = ChaCha20Poly1305::generate_nonce(&mut OsRng);
        let ct = self
            .cipher
            .encrypt(
                &nonce,
                Payload {
                    msg: salt.as_bytes(),
                    aad: payload_hash.as_bytes(),
                },
            )
            .expect("encrypting 16 bytes cannot fail");
        self.file
            .entries
            .insert(payload_hash.to_hex(), (hex::encode(nonce), hex::encode(ct)));
        let bytes = serde_json::to_vec_pretty(&self.file).expect("vault is plain data");
        write_private(&self.path, &bytes)
    }

    /// Salt for `payload_hash`, generating and storing a fresh one if absent.
    pub fn get_or_create(&mut self, payload_hash: &Digest) -> Result<Salt, KeyError> {
        if let Some(s) = self.get(payload_hash)? {
            return Ok(s);
        }
        let salt = Salt::random(&mut OsRng);
        self.insert(payload_hash, &salt)?;
        Ok(salt)
    }
}

/// Hash that keys a payload in the vault.
pub fn payload_hash(canonical_payload: &[u8]) -> Digest {
    sha256(canonical_payload)
}
