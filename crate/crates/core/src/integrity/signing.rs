use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};

byte_newtype!(
    /// Ed25519 verification key.
    PublicKey,
    32
);

byte_newtype!(
    /// Ed25519 signature.
    Signature,
    64
);

/// A participant's or the server's signing key.
#[derive(Clone)]
pub struct SigningIdentity {
    key: SigningKey,
}

impl SigningIdentity {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        Self {
            key: SigningKey::from_bytes(&secret),
        }
    }

    pub fn generate<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self::from_secret(secret)
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.key.sign(message).to_bytes())
    }

    /// Signs the canonical encoding of `value`.
    pub fn sign_canonical<T: serde::Serialize + ?Sized>(&self, value: &T) -> Signature {
        self.sign(&crate::canonical::to_bytes(value))
    }
}

impl std::fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningIdentity")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

pub fn verify(key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(key.as_bytes()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(signature.as_bytes());
    vk.verify(message, &sig).is_ok()
}

pub fn verify_canonical<T: serde::Serialize + ?Sized>(
    key: &PublicKey,
    value: &T,
    signature: &Signature,
) -> bool {
    verify(key, &crate::canonical::to_bytes(value), signature)
}
