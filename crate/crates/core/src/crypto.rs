//! Hashing, signing, address derivation and public-key encryption.
//!
//! Schemes: SHA-256 digests, Ed25519 signatures, and an X25519 + ChaCha20-Poly1305
//! sealed box for confidentiality. Encryption reuses the Ed25519 key by mapping
//! it to its Montgomery form, so every agent has exactly one keypair.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use curve25519_dalek::montgomery::MontgomeryPoint;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};

pub const DIGEST_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
/// Bytes added by [`encrypt_for`]: ephemeral public point plus AEAD tag.
pub const SEALED_OVERHEAD: usize = 32 + 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("decryption failed")]
    DecryptionFailed,
    #[error("public key is not a valid curve point")]
    InvalidPublicKey,
    #[error("multisig requires 1 <= m <= n (m = {m}, n = {n})")]
    InvalidThreshold { m: u32, n: usize },
    #[error("multisig key list contains duplicates")]
    DuplicateKey,
}

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &self.to_hex()[..8])
            }
        }

        impl Encode for $name {
            fn encode_to(&self, enc: &mut Encoder) {
                enc.raw(&self.0);
            }
        }

        impl Decode for $name {
            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                dec.array::<$len>(stringify!($name)).map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

byte_newtype!(
    /// SHA-256 output.
    Digest256,
    DIGEST_LEN
);
byte_newtype!(
    /// Account identifier: the first 20 bytes of a key (or multisig) digest.
    Address,
    ADDRESS_LEN
);
byte_newtype!(
    /// Ed25519 verifying key bytes.
    PublicKey,
    PUBLIC_KEY_LEN
);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0; DIGEST_LEN]);
}

pub fn hash(data: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(data).into())
}

/// Hash of several byte strings, each length-prefixed so that boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> Digest256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    Digest256(h.finalize().into())
}

/// Private half of a keypair. Deliberately has no `Serialize` or `Encode`
/// implementation and redacts itself in `Debug`.
#[derive(Clone)]
pub struct PrivateKey(SigningKey);

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(<redacted>)")
    }
}

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    /// Raw secret bytes, exposed only so tests can scan artifacts for leaks.
    pub fn secret_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    pub fn address(&self) -> Address {
        derive_address(&self.public)
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        sign(&self.private, msg)
    }
}

pub fn generate_keypair(seed: &[u8; 32]) -> KeyPair {
    let signing = SigningKey::from_bytes(seed);
    KeyPair {
        public: PublicKey(signing.verifying_key().to_bytes()),
        private: PrivateKey(signing),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub bytes: [u8; SIGNATURE_LEN],
    pub signer: PublicKey,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature(by {:?})", self.signer)
    }
}

impl Encode for Signature {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.signer).raw(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let signer = dec.get()?;
        let bytes = dec.array::<SIGNATURE_LEN>("signature")?;
        Ok(Self { bytes, signer })
    }
}

pub fn sign(key: &PrivateKey, msg: &[u8]) -> Signature {
    Signature {
        bytes: key.0.sign(msg).to_bytes(),
        signer: key.public_key(),
    }
}

/// True iff `sig` was produced over exactly `msg` by the private counterpart of `public`.
pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    if sig.signer != *public {
        return false;
    }
    let Ok(vk) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.bytes);
    vk.verify(msg, &sig).is_ok()
}

pub fn derive_address(public: &PublicKey) -> Address {
    truncate(&hash(&public.0))
}

fn truncate(d: &Digest256) -> Address {
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&d.0[..ADDRESS_LEN]);
    Address(out)
}

/// An m-of-n key set. Keys are kept sorted so the derived address does not
/// depend on the order they were supplied in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultisigSpec {
    m: u32,
    pubkeys: Vec<PublicKey>,
}

impl MultisigSpec {
    pub fn new(m: u32, mut pubkeys: Vec<PublicKey>) -> Result<Self, CryptoError> {
        let n = pubkeys.len();
        if m == 0 || m as usize > n {
            return Err(CryptoError::InvalidThreshold { m, n });
        }
        pubkeys.sort();
        if pubkeys.windows(2).any(|w| w[0] == w[1]) {
            return Err(CryptoError::DuplicateKey);
        }
        Ok(Self { m, pubkeys })
    }

    pub fn threshold(&self) -> u32 {
        self.m
    }

    pub fn pubkeys(&self) -> &[PublicKey] {
        &self.pubkeys
    }

    pub fn contains(&self, key: &PublicKey) -> bool {
        self.pubkeys.binary_search(key).is_ok()
    }

    pub fn address(&self) -> Address {
        derive_multisig_address(self)
    }

    /// Number of distinct keys of this spec that produced a valid signature over `msg`.
    pub fn count_valid(&self, msg: &[u8], sigs: &[Signature]) -> usize {
        let mut signers: Vec<PublicKey> = sigs
            .iter()
            .filter(|s| self.contains(&s.signer) && verify(&s.signer, msg, s))
            .map(|s| s.signer)
            .collect();
        signers.sort();
        signers.dedup();
        signers.len()
    }
}

impl Encode for MultisigSpec {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u32(self.m).list(&self.pubkeys);
    }
}

impl Decode for MultisigSpec {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let m = dec.u32("multisig m")?;
        let keys: Vec<PublicKey> = dec.list("multisig keys")?;
        // Only canonical (sorted, distinct) key lists decode.
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::Invalid("multisig key order"));
        }
        MultisigSpec::new(m, keys).map_err(|_| DecodeError::Invalid("multisig threshold"))
    }
}

pub fn derive_multisig_address(spec: &MultisigSpec) -> Address {
    truncate(&hash(&spec.encode()))
}

fn montgomery_of(public: &PublicKey) -> Result<MontgomeryPoint, CryptoError> {
    VerifyingKey::from_bytes(&public.0)
        .map(|vk| vk.to_montgomery())
        .map_err(|_| CryptoError::InvalidPublicKey)
}

fn sealing_key(shared: &MontgomeryPoint, ephemeral: &MontgomeryPoint, recipient: &PublicKey) -> Key {
    let d = hash_parts(&[b"swarmledger/seal", shared.as_bytes(), ephemeral.as_bytes(), &recipient.0]);
    Key::from(d.0)
}

/// Encrypts `plaintext` so that only the holder of the private key matching
/// `recipient` can read it. The ephemeral key is drawn from `rng`.
pub fn encrypt_for<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    let target = montgomery_of(recipient)?;
    let mut eph_secret = [0u8; 32];
    rng.fill_bytes(&mut eph_secret);
    let eph_public = MontgomeryPoint::mul_base_clamped(eph_secret);
    let shared = target.mul_clamped(eph_secret);
    let cipher = ChaCha20Poly1305::new(&sealing_key(&shared, &eph_public, recipient));
    let body = cipher
        .encrypt(&Nonce::default(), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let mut out = Vec::with_capacity(SEALED_OVERHEAD + plaintext.len());
    out.extend_from_slice(eph_public.as_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decrypt(key: &PrivateKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < SEALED_OVERHEAD {
        return Err(CryptoError::DecryptionFailed);
    }
    let (eph, body) = ciphertext.split_at(32);
    let eph_public = MontgomeryPoint(eph.try_into().expect("32 bytes"));
    let shared = eph_public * key.0.to_scalar();
    let recipient = key.public_key();
    let cipher = ChaCha20Poly1305::new(&sealing_key(&shared, &eph_public, &recipient));
    cipher
        .decrypt(&Nonce::default(), body)
        .map_err(|_| CryptoError::DecryptionFailed)
}
