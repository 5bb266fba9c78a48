//! Hashing, signing identities and address derivation.
//!
//! SHA-256 is the only digest in the system. Identities are Ed25519 key
//! pairs: deterministic signatures, 64-byte signatures and a 32-byte seed
//! from which the pair is derived.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader};

pub const DIGEST_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SEED_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("public key must be {PUBLIC_KEY_LEN} bytes, got {0}")]
    PublicKeyLength(usize),
    #[error("public key is not a valid curve point")]
    InvalidPublicKey,
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
}

macro_rules! hex_bytes_type {
    ($name:ident, $len:expr) => {
        impl $name {
            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let raw = hex::decode(s.trim()).map_err(|e| CryptoError::Hex(e.to_string()))?;
                let arr: [u8; $len] = raw.as_slice().try_into().map_err(|_| CryptoError::Length {
                    expected: $len,
                    actual: raw.len(),
                })?;
                Ok(Self(arr))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
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

        impl Encode for $name {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.0);
            }
        }
    };
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest32(pub [u8; DIGEST_LEN]);

hex_bytes_type!(Digest32, DIGEST_LEN);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0; DIGEST_LEN]);
}

impl Decode for Digest32 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.array()?))
    }
}

/// 20-byte account identifier: the trailing bytes of the public key's hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; ADDRESS_LEN]);

hex_bytes_type!(Address, ADDRESS_LEN);

impl Decode for Address {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.array()?))
    }
}

/// Ed25519 verifying key bytes. Construction checks the point decodes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

hex_bytes_type!(PublicKey, PUBLIC_KEY_LEN);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::PublicKeyLength(bytes.len()))?;
        VerifyingKey::from_bytes(&arr).map_err(|_| CryptoError::InvalidPublicKey)?;
        Ok(Self(arr))
    }

    pub fn parse_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s.trim()).map_err(|e| CryptoError::Hex(e.to_string()))?;
        Self::from_bytes(&raw)
    }

    pub fn address(&self) -> Address {
        derive_address(self)
    }
}

impl Decode for PublicKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let arr: [u8; PUBLIC_KEY_LEN] = r.array()?;
        PublicKey::from_bytes(&arr).map_err(|_| CodecError::Invalid("public key"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

hex_bytes_type!(Signature, SIGNATURE_LEN);

impl Signature {
    /// All-zero placeholder used while a message is being assembled.
    pub const EMPTY: Signature = Signature([0; SIGNATURE_LEN]);
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.array()?))
    }
}

/// Signing identity. The private half is never encoded or serialized.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Fresh identity from OS entropy.
    pub fn generate() -> Self {
        let mut seed = [0u8; SEED_LEN];
        rand::rngs::OsRng.fill_bytes(&mut seed);
        Self::from_seed(&seed)
    }

    pub fn from_seed(seed: &[u8; SEED_LEN]) -> Self {
        let signing = SigningKey::from_bytes(seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        Self { signing, public }
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn address(&self) -> Address {
        derive_address(&self.public)
    }

    pub fn seed(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }
}

pub fn hash(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Hash over the concatenation of several byte strings.
pub fn hash_concat(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest32(h.finalize().into())
}

/// Deterministic key pair from a 32-byte seed.
pub fn generate_identity(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let arr: &[u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::SeedLength(seed.len()))?;
    Ok(KeyPair::from_seed(arr))
}

/// Seed derived from a human-readable label; used by fixtures and the
/// simulator so that every run names the same identities.
pub fn seed_from_label(label: &str) -> [u8; SEED_LEN] {
    hash_concat(&[b"examchain/seed/", label.as_bytes()]).0
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    Signature(key.signing.sign(message).to_bytes())
}

pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

pub fn derive_address(public_key: &PublicKey) -> Address {
    let digest = hash(&public_key.0);
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest.0[DIGEST_LEN - ADDRESS_LEN..]);
    Address(out)
}

/// Address from raw key bytes, rejecting malformed encodings.
pub fn derive_address_bytes(public_key: &[u8]) -> Result<Address, CryptoError> {
    PublicKey::from_bytes(public_key).map(|pk| derive_address(&pk))
}

/// Parses seed files: one 64-hex-digit seed per line, blank lines and `#`
/// comments ignored.
pub fn parse_seed_lines(text: &str) -> Result<Vec<[u8; SEED_LEN]>, CryptoError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let raw = hex::decode(l).map_err(|e| CryptoError::Hex(e.to_string()))?;
            raw.as_slice()
                .try_into()
                .map_err(|_| CryptoError::SeedLength(raw.len()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    // FIPS 180-4 / NIST CSHA example vectors, independent of the sha2 crate.
    const SHA256_EMPTY: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const SHA256_ABC: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";

    #[test]
    fn hash_matches_published_vectors() {
        assert_eq!(hash(b"").to_hex(), SHA256_EMPTY);
        assert_eq!(hash(b"abc").to_hex(), SHA256_ABC);
        assert_eq!(hash(b"abc"), hash(b"abc"));
    }

    #[test]
    fn single_bit_flips_change_the_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..64);
            let mut data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let before = hash(&data);
            let bit = rng.gen_range(0..len * 8);
            data[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(before, hash(&data));
        }
    }

    #[test]
    fn identity_generation_is_deterministic_and_injective() {
        let a = generate_identity(&[1; 32]).unwrap();
        let b = generate_identity(&[1; 32]).unwrap();
        let c = generate_identity(&[2; 32]).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        assert_ne!(a.public_key(), c.public_key());
        assert_eq!(generate_identity(&[0; 31]).unwrap_err(), CryptoError::SeedLength(31));
    }

    #[test]
    fn random_seeds_give_distinct_addresses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let addrs: HashSet<Address> = (0..1000)
            .map(|_| KeyPair::from_seed(&rng.gen()).address())
            .collect();
        assert_eq!(addrs.len(), 1000);
    }

    #[test]
    fn sign_verify_round_trip_and_rejections() {
        let k = KeyPair::from_seed(&[3; 32]);
        let other = KeyPair::from_seed(&[4; 32]);
        let msg = b"record grade AA for course CS101".to_vec();
        let sig = sign(&k, &msg);
        assert!(verify(&k.public_key(), &msg, &sig));
        assert!(!verify(&other.public_key(), &msg, &sig));
        for i in 0..msg.len() {
            let mut m = msg.clone();
            m[i] ^= 0x01;
            assert!(!verify(&k.public_key(), &m, &sig), "mutation at byte {i} accepted");
        }
        let mut bad = sig;
        bad.0[0] ^= 1;
        assert!(!verify(&k.public_key(), &msg, &bad));
    }

    #[test]
    fn address_is_tail_of_key_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = KeyPair::from_seed(&rng.gen());
            let pk = k.public_key();
            let h = hash(pk.as_bytes());
            assert_eq!(derive_address(&pk).0[..], h.0[12..]);
            assert_eq!(derive_address(&pk), derive_address(&pk));
        }
    }

    #[test]
    fn malformed_keys_are_rejected() {
        assert_eq!(
            derive_address_bytes(&[0u8; 31]),
            Err(CryptoError::PublicKeyLength(31))
        );
        assert!(PublicKey::parse_hex("zz").is_err());
    }

    #[test]
    fn seed_file_parsing() {
        let text = format!("# operator\n{}\n\n", "11".repeat(32));
        assert_eq!(parse_seed_lines(&text).unwrap(), vec![[0x11; 32]]);
        assert!(parse_seed_lines("abcd").is_err());
    }
}
