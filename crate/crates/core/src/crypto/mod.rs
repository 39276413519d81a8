//! Hashing, Ed25519 signatures and the Merkle tree of active public keys.
//!
//! The protocol runs a single fixed suite: SHA-256 for every digest and
//! Ed25519 for every signature. Neither carries an algorithm tag.

mod merkle;

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};

use crate::meter;

pub use merkle::{merkle_build, merkle_build_canonical, merkle_prove, merkle_verify};
pub use merkle::{MembershipProof, MerkleError, MerkleTree, ProofStep, Side};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Ed25519 public key bytes. Identity of a device block.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    /// Parses into a curve point. `None` for bytes that are not a valid
    /// compressed Edwards point.
    pub fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).ok()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

/// Ed25519 signature bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

/// Secret signing material.
#[derive(Clone)]
pub struct PrivateKey(SigningKey);

impl PrivateKey {
    /// Builds a key from a 32-byte secret seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        PrivateKey(SigningKey::from_bytes(&seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let private = PrivateKey::from_seed(seed);
        KeyPair {
            public: private.public_key(),
            private,
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.private, message)
    }
}

/// Fresh key pair from the operating system's CSPRNG.
pub fn generate_keypair() -> KeyPair {
    generate_keypair_with(&mut OsRng)
}

/// Fresh key pair from a caller-supplied CSPRNG. The simulator threads a
/// seeded ChaCha stream through here so runs are replayable.
pub fn generate_keypair_with<R: RngCore + CryptoRng>(rng: &mut R) -> KeyPair {
    meter::record_keygen();
    let sk = SigningKey::generate(rng);
    KeyPair {
        public: PublicKey(sk.verifying_key().to_bytes()),
        private: PrivateKey(sk),
    }
}

pub fn sign(sk: &PrivateKey, message: &[u8]) -> Signature {
    meter::record_sign();
    Signature(sk.0.sign(message).to_bytes())
}

/// True iff `sig` was produced over `message` by the key paired with `pk`.
/// Malformed keys or signatures simply fail.
pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    match pk.verifying_key() {
        Some(vk) => verify_with(&vk, message, sig),
        None => {
            meter::record_verify();
            false
        }
    }
}

/// Same as [`verify`] with an already-decompressed key.
pub fn verify_with(vk: &VerifyingKey, message: &[u8], sig: &Signature) -> bool {
    meter::record_verify();
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(message, &sig).is_ok()
}

/// Checks many `(key, message, signature)` triples at once. `true` means
/// every signature is valid; on `false` the caller falls back to [`verify_with`]
/// to find the culprits. Not metered: callers charge one verify per item
/// when they consume the result.
pub fn verify_batch(items: &[(&VerifyingKey, &[u8], &Signature)]) -> bool {
    if items.is_empty() {
        return true;
    }
    let msgs: Vec<&[u8]> = items.iter().map(|t| t.1).collect();
    let sigs: Vec<ed25519_dalek::Signature> =
        items.iter().map(|t| ed25519_dalek::Signature::from_bytes(&t.2 .0)).collect();
    let keys: Vec<VerifyingKey> = items.iter().map(|t| *t.0).collect();
    ed25519_dalek::verify_batch(&msgs, &sigs, &keys).is_ok()
}

/// Verifies a signature supplied as a raw byte slice (any length).
pub fn verify_bytes(pk: &PublicKey, message: &[u8], sig: &[u8]) -> bool {
    match <[u8; SIGNATURE_LEN]>::try_from(sig) {
        Ok(arr) => verify(pk, message, &Signature(arr)),
        Err(_) => false,
    }
}

pub fn hash(data: &[u8]) -> Digest {
    meter::record_hash(data.len());
    Digest(Sha256::digest(data).into())
}

/// Digest of the concatenation `left || right`.
pub fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    meter::record_hash(2 * DIGEST_LEN);
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Streaming hasher for values too large to materialise.
#[derive(Clone, Default)]
pub struct Hasher {
    inner: Sha256,
    len: usize,
}

impl Hasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.len += bytes.len();
        self.inner.update(bytes);
    }

    pub fn finish(self) -> Digest {
        meter::record_hash(self.len);
        Digest(self.inner.finalize().into())
    }
}
