//! Hashing, session binding and bit-level measurement primitives.
//!
//! Bit numbering used throughout the crate: bit 0 is the most significant bit
//! of octet 0, bit 8 the most significant bit of octet 1, and so on.

mod sha256;

use std::collections::HashSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use sha256::Sha256;

/// Deterministic generator used wherever the protocol needs randomness.
pub type DetRng = ChaCha20Rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("bit index exceeds data length: {index} >= {len_bits}")]
    BitIndexOutOfRange { index: usize, len_bits: usize },
    #[error("duplicate flip position: {0}")]
    DuplicateFlip(usize),
    #[error("signature must be non-empty")]
    EmptySignature,
    #[error("signature bit length {bits} does not fit {octets} octets")]
    SignatureLength { bits: usize, octets: usize },
    #[error("invalid hex: {0}")]
    Hex(String),
}

/// A 256-bit SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const BITS: usize = 256;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Hex("digest must be 32 octets".into()))?;
        Ok(Digest256(arr))
    }

    pub fn complement(&self) -> Self {
        let mut out = self.0;
        out.iter_mut().for_each(|b| *b = !*b);
        Digest256(out)
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", self.to_hex())
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Raw chiplet signature. Bits past `bit_len` in the final octet are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl Signature {
    pub fn new(mut bytes: Vec<u8>, bit_len: usize) -> Result<Self, CryptoError> {
        if bit_len == 0 || bytes.is_empty() {
            return Err(CryptoError::EmptySignature);
        }
        if bit_len > bytes.len() * 8 || bit_len <= (bytes.len() - 1) * 8 {
            return Err(CryptoError::SignatureLength {
                bits: bit_len,
                octets: bytes.len(),
            });
        }
        let spare = bytes.len() * 8 - bit_len;
        if spare > 0 {
            let last = bytes.len() - 1;
            bytes[last] &= 0xffu8 << spare;
        }
        Ok(Signature { bytes, bit_len })
    }

    /// Whole-octet signature.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, CryptoError> {
        let bits = bytes.len() * 8;
        Self::new(bytes, bits)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Copy with the given bit positions inverted (positions must be < `bit_len`).
    pub fn with_flipped_bits(&self, positions: &[usize]) -> Result<Self, CryptoError> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.bit_len) {
            return Err(CryptoError::BitIndexOutOfRange {
                index: bad,
                len_bits: self.bit_len,
            });
        }
        let bytes = flip_bits(&self.bytes, positions)?;
        Ok(Signature {
            bytes,
            bit_len: self.bit_len,
        })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bits, {})", self.bit_len, self.to_hex())
    }
}

/// Per-session binding: a strictly increasing id and a fresh 128-bit nonce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionContext {
    pub session_id: u64,
    #[serde(with = "u128_hex")]
    pub nonce: u128,
}

/// Issues [`SessionContext`]s for one simulation run.
///
/// Nonces are a keyed 128-bit Feistel permutation of the session counter, so
/// they look random to anyone without the seed yet can never repeat within a run.
#[derive(Clone, Debug)]
pub struct SessionSource {
    key: [u8; 32],
    last_id: u64,
}

const FEISTEL_ROUNDS: u8 = 6;

impl SessionSource {
    pub fn new(seed: u64) -> Self {
        let mut material = b"authentree/session-key".to_vec();
        material.extend_from_slice(&seed.to_be_bytes());
        SessionSource {
            key: sha256::digest(&material),
            last_id: 0,
        }
    }

    /// Resume after `last_id` (the next session gets `last_id + 1`).
    pub fn resume(seed: u64, last_id: u64) -> Self {
        let mut s = Self::new(seed);
        s.last_id = last_id;
        s
    }

    pub fn next_session(&mut self) -> SessionContext {
        self.last_id = self
            .last_id
            .checked_add(1)
            .expect("session counter exhausted");
        SessionContext {
            session_id: self.last_id,
            nonce: self.permute(self.last_id as u128),
        }
    }

    fn round_fn(&self, round: u8, half: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(&self.key);
        h.update(&[round]);
        h.update(&half.to_be_bytes());
        let out = h.finalize();
        u64::from_be_bytes(out[..8].try_into().expect("8 octets"))
    }

    fn permute(&self, value: u128) -> u128 {
        let mut left = (value >> 64) as u64;
        let mut right = value as u64;
        for round in 0..FEISTEL_ROUNDS {
            let next = left ^ self.round_fn(round, right);
            left = right;
            right = next;
        }
        ((left as u128) << 64) | right as u128
    }
}

/// SHA-256 of `data`.
pub fn sha256(data: &[u8]) -> Digest256 {
    Digest256(sha256::digest(data))
}

/// `sha256(sig ‖ nonce ‖ session_id ‖ target_id)`, numeric fields big-endian
/// at 128, 64 and 64 bits.
pub fn session_digest(sig: &Signature, ctx: &SessionContext, target_id: u64) -> Digest256 {
    let mut h = Sha256::new();
    h.update(sig.bytes());
    h.update(&ctx.nonce.to_be_bytes());
    h.update(&ctx.session_id.to_be_bytes());
    h.update(&target_id.to_be_bytes());
    Digest256(h.finalize())
}

pub fn hamming_distance(a: &Digest256, b: &Digest256) -> u32 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Bitwise Hamming distance over equal-length octet strings.
pub fn hamming_distance_bytes(a: &[u8], b: &[u8]) -> u32 {
    assert_eq!(a.len(), b.len(), "hamming distance needs equal lengths");
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Returns a copy of `data` with the listed bits inverted.
pub fn flip_bits(data: &[u8], positions: &[usize]) -> Result<Vec<u8>, CryptoError> {
    let len_bits = data.len() * 8;
    let mut seen = HashSet::with_capacity(positions.len());
    for &p in positions {
        if p >= len_bits {
            return Err(CryptoError::BitIndexOutOfRange { index: p, len_bits });
        }
        if !seen.insert(p) {
            return Err(CryptoError::DuplicateFlip(p));
        }
    }
    let mut out = data.to_vec();
    for &p in positions {
        out[p / 8] ^= 0x80 >> (p % 8);
    }
    Ok(out)
}

/// Derives an independent 64-bit seed from a parent seed, a label and an index.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(&seed.to_be_bytes());
    h.update(label.as_bytes());
    h.update(&[0]);
    h.update(&index.to_be_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("8 octets"))
}

pub fn det_rng(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

pub(crate) mod u128_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sig(bytes: &[u8]) -> Signature {
        Signature::from_bytes(bytes.to_vec()).unwrap()
    }

    #[test]
    fn flip_single_msb() {
        assert_eq!(flip_bits(&[0x00], &[0]).unwrap(), vec![0x80]);
        assert_eq!(flip_bits(&[0x00, 0x00], &[15]).unwrap(), vec![0x00, 0x01]);
    }

    #[test]
    fn flip_empty_is_identity() {
        let x = [1u8, 2, 3];
        assert_eq!(flip_bits(&x, &[]).unwrap(), x.to_vec());
    }

    #[test]
    fn flip_errors() {
        assert_eq!(
            flip_bits(&[0u8; 2], &[16]),
            Err(CryptoError::BitIndexOutOfRange {
                index: 16,
                len_bits: 16
            })
        );
        assert_eq!(
            flip_bits(&[0u8; 2], &[3, 3]),
            Err(CryptoError::DuplicateFlip(3))
        );
        assert!(flip_bits(&[0u8; 2], &[16])
            .unwrap_err()
            .to_string()
            .contains("bit index exceeds data length"));
        assert!(flip_bits(&[0u8; 2], &[1, 1])
            .unwrap_err()
            .to_string()
            .contains("duplicate flip position"));
    }

    #[test]
    fn hamming_identity_and_complement() {
        let x = sha256(b"x");
        assert_eq!(hamming_distance(&x, &x), 0);
        assert_eq!(hamming_distance(&x, &x.complement()), 256);
    }

    #[test]
    fn session_digest_is_256_bits_for_any_signature_length() {
        let ctx = SessionSource::new(1).next_session();
        let short = Signature::new(vec![0xab; 8], 64).unwrap();
        let long = Signature::new(vec![0xcd; 64], 512).unwrap();
        assert_eq!(session_digest(&short, &ctx, 7).as_bytes().len(), 32);
        assert_eq!(session_digest(&long, &ctx, 7).as_bytes().len(), 32);
        assert_eq!(
            session_digest(&short, &ctx, 7),
            session_digest(&short, &ctx, 7)
        );
    }

    #[test]
    fn session_digest_layout() {
        let s = sig(&[0xde, 0xad]);
        let ctx = SessionContext {
            session_id: 3,
            nonce: 0x0102_0304_0506_0708_090a_0b0c_0d0e_0f10,
        };
        let mut manual = vec![0xde, 0xad];
        manual.extend_from_slice(&ctx.nonce.to_be_bytes());
        manual.extend_from_slice(&3u64.to_be_bytes());
        manual.extend_from_slice(&9u64.to_be_bytes());
        assert_eq!(session_digest(&s, &ctx, 9), sha256(&manual));
    }

    #[test]
    fn different_nonces_different_digests() {
        let mut rng = det_rng(11);
        let mut source = SessionSource::new(5);
        for _ in 0..1000 {
            let bytes: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            let s = sig(&bytes);
            let a = source.next_session();
            let b = source.next_session();
            assert_ne!(session_digest(&s, &a, 1), session_digest(&s, &b, 1));
        }
    }

    #[test]
    fn sessions_strictly_increase_with_fresh_nonces() {
        let mut source = SessionSource::new(42);
        let mut nonces = HashSet::new();
        let mut last = 0;
        for _ in 0..10_000 {
            let ctx = source.next_session();
            assert!(ctx.session_id > last);
            last = ctx.session_id;
            assert!(nonces.insert(ctx.nonce));
        }
    }

    #[test]
    fn signature_masks_trailing_bits() {
        let s = Signature::new(vec![0xff, 0xff], 12).unwrap();
        assert_eq!(s.bytes(), &[0xff, 0xf0]);
        assert!(Signature::new(vec![0xff, 0xff], 8).is_err());
        assert!(Signature::new(vec![], 0).is_err());
        assert!(s.with_flipped_bits(&[12]).is_err());
    }

    #[test]
    fn digest_hex_roundtrip() {
        let d = sha256(b"abc");
        assert_eq!(Digest256::from_hex(&d.to_hex()).unwrap(), d);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest256>(&json).unwrap(), d);
    }
}
