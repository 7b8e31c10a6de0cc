//! Threshold sharing of per-session expected digests.
//!
//! Shamir sharing over GF(2^8), applied octet by octet. Every share carries a
//! commitment `sha256(index ‖ payload)` so that a corrupted share can be told
//! apart from a missing one.

pub mod gf256;

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256, Digest256, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("threshold out of range: t={t}, n={n} (need 2 <= t <= n <= 255)")]
    ThresholdOutOfRange { t: usize, n: usize },
    #[error("secret must be non-empty")]
    EmptySecret,
    #[error("insufficient shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("corrupted share: index {0}")]
    CorruptedShare(u8),
    #[error("duplicate share index: {0}")]
    DuplicateIndex(u8),
    #[error("share payload lengths differ")]
    LengthMismatch,
    #[error("malformed share encoding")]
    Malformed,
}

/// `t` of `n` threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPolicy {
    pub n: usize,
    pub t: usize,
}

impl SharingPolicy {
    pub fn new(t: usize, n: usize) -> Result<Self, SharingError> {
        if t < 2 || t > n || n > 255 {
            return Err(SharingError::ThresholdOutOfRange { t, n });
        }
        Ok(SharingPolicy { n, t })
    }

    /// Default two-thirds quorum, `t = ceil(2n / 3)`.
    pub fn two_thirds(n: usize) -> Result<Self, SharingError> {
        Self::new(default_threshold(n), n)
    }
}

pub fn default_threshold(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub index: u8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub commitment: Digest256,
}

impl Share {
    pub fn new(index: u8, payload: Vec<u8>) -> Self {
        let commitment = commitment_of(index, &payload);
        Share {
            index,
            payload,
            commitment,
        }
    }

    /// `index (1 octet) ‖ payload ‖ commitment (32 octets)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.payload.len() + 32);
        out.push(self.index);
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(self.commitment.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SharingError> {
        if bytes.len() < 1 + 1 + 32 {
            return Err(SharingError::Malformed);
        }
        let (payload, commitment) = bytes[1..].split_at(bytes.len() - 1 - 32);
        Ok(Share {
            index: bytes[0],
            payload: payload.to_vec(),
            commitment: Digest256(commitment.try_into().expect("32 octets")),
        })
    }
}

fn commitment_of(index: u8, payload: &[u8]) -> Digest256 {
    let mut h = Sha256::new();
    h.update(&[index]);
    h.update(payload);
    Digest256(h.finalize())
}

pub fn verify_commitment(share: &Share) -> bool {
    commitment_of(share.index, &share.payload) == share.commitment
}

/// Splits `secret` into `policy.n` shares with indices `1..=n`.
pub fn split<R: RngCore + ?Sized>(
    secret: &[u8],
    policy: SharingPolicy,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    let policy = SharingPolicy::new(policy.t, policy.n)?;
    if secret.is_empty() {
        return Err(SharingError::EmptySecret);
    }

    let mut payloads = vec![Vec::with_capacity(secret.len()); policy.n];
    let mut coeffs = vec![0u8; policy.t];
    for &octet in secret {
        coeffs[0] = octet;
        rng.fill_bytes(&mut coeffs[1..]);
        for (i, payload) in payloads.iter_mut().enumerate() {
            payload.push(gf256::eval_poly(&coeffs, (i + 1) as u8));
        }
    }

    Ok(payloads
        .into_iter()
        .enumerate()
        .map(|(i, p)| Share::new((i + 1) as u8, p))
        .collect())
}

/// Lagrange interpolation at zero over whatever shares are given, with no
/// threshold or commitment checks. Callers wanting the checked path use
/// [`reconstruct`].
pub fn interpolate(shares: &[Share]) -> Vec<u8> {
    let len = shares.first().map_or(0, |s| s.payload.len());
    let weights: Vec<u8> = shares
        .iter()
        .map(|si| {
            shares
                .iter()
                .filter(|sj| sj.index != si.index)
                .fold(1u8, |acc, sj| {
                    // basis_i(0) = prod x_j / (x_j - x_i); subtraction is xor
                    gf256::mul(acc, gf256::div(sj.index, sj.index ^ si.index))
                })
        })
        .collect();

    (0..len)
        .map(|k| {
            shares
                .iter()
                .zip(&weights)
                .fold(0u8, |acc, (s, &w)| acc ^ gf256::mul(w, s.payload[k]))
        })
        .collect()
}

/// Checked reconstruction: distinct indices, equal lengths, at least `t`
/// shares, every commitment valid. Interpolates over the `t` lowest indices.
pub fn reconstruct(shares: &[Share], policy: SharingPolicy) -> Result<Vec<u8>, SharingError> {
    let mut seen = HashSet::new();
    for s in shares {
        if s.index == 0 {
            return Err(SharingError::Malformed);
        }
        if !seen.insert(s.index) {
            return Err(SharingError::DuplicateIndex(s.index));
        }
    }
    if let Some(first) = shares.first() {
        if shares
            .iter()
            .any(|s| s.payload.len() != first.payload.len())
        {
            return Err(SharingError::LengthMismatch);
        }
    }
    if shares.len() < policy.t {
        return Err(SharingError::InsufficientShares {
            have: shares.len(),
            need: policy.t,
        });
    }
    if let Some(bad) = shares.iter().find(|s| !verify_commitment(s)) {
        return Err(SharingError::CorruptedShare(bad.index));
    }

    let mut sorted: Vec<Share> = shares.to_vec();
    sorted.sort_by_key(|s| s.index);
    sorted.truncate(policy.t);
    Ok(interpolate(&sorted))
}

/// Digest over the full share vector `1..=n` in index order, each entry
/// `index ‖ payload`. Indices listed in `withheld` contribute an all-zero
/// payload instead of their real one.
pub fn aggregate_digest(shares: &[Share], n: usize, withheld: &[u8]) -> Digest256 {
    let payload_len = shares.first().map_or(0, |s| s.payload.len());
    let zeros = vec![0u8; payload_len];
    let mut buf = Vec::with_capacity(n * (payload_len + 1));
    for index in 1..=n as u8 {
        buf.push(index);
        let payload = if withheld.contains(&index) {
            &zeros
        } else {
            shares
                .iter()
                .find(|s| s.index == index)
                .map_or(&zeros, |s| &s.payload)
        };
        buf.extend_from_slice(payload);
    }
    sha256(&buf)
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::det_rng;
    use rand::Rng;

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                go(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        go(0, n, k, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn full_set_roundtrip() {
        let mut rng = det_rng(1);
        let secret = b"chiplet secret material".to_vec();
        let policy = SharingPolicy::new(3, 3).unwrap();
        let shares = split(&secret, policy, &mut rng).unwrap();
        assert_eq!(reconstruct(&shares, policy).unwrap(), secret);
    }

    #[test]
    fn every_three_of_five_subset_reconstructs() {
        let mut rng = det_rng(2);
        let secret: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
        let policy = SharingPolicy::new(3, 5).unwrap();
        let shares = split(&secret, policy, &mut rng).unwrap();
        let subsets = combinations(5, 3);
        assert_eq!(subsets.len(), 10);
        for subset in subsets {
            let picked: Vec<Share> = subset.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(reconstruct(&picked, policy).unwrap(), secret);
        }
    }

    #[test]
    fn two_shares_of_three_threshold_never_recover() {
        let mut rng = det_rng(3);
        let policy = SharingPolicy::new(3, 5).unwrap();
        let mut hits = 0;
        for _ in 0..1000 {
            let secret: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            let shares = split(&secret, policy, &mut rng).unwrap();
            if interpolate(&shares[..2]) == secret {
                hits += 1;
            }
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn error_paths() {
        let mut rng = det_rng(4);
        let policy = SharingPolicy::new(3, 4).unwrap();
        let shares = split(b"abc", policy, &mut rng).unwrap();

        assert_eq!(
            reconstruct(&shares[..2], policy),
            Err(SharingError::InsufficientShares { have: 2, need: 3 })
        );

        let mut tampered = shares.clone();
        tampered[1].payload[0] ^= 0x01;
        assert_eq!(
            reconstruct(&tampered, policy),
            Err(SharingError::CorruptedShare(2))
        );

        let dup = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert_eq!(
            reconstruct(&dup, policy),
            Err(SharingError::DuplicateIndex(1))
        );

        assert!(matches!(
            SharingPolicy::new(5, 4),
            Err(SharingError::ThresholdOutOfRange { .. })
        ));
        assert!(SharingPolicy::new(1, 4).is_err());
        assert!(SharingPolicy::new(2, 256).is_err());
        assert!(split(b"", policy, &mut rng).is_err());
        assert!(SharingPolicy::new(5, 4)
            .unwrap_err()
            .to_string()
            .contains("threshold out of range"));
    }

    #[test]
    fn commitments() {
        let mut rng = det_rng(5);
        let policy = SharingPolicy::new(2, 3).unwrap();
        let shares = split(b"secret", policy, &mut rng).unwrap();
        assert!(shares.iter().all(verify_commitment));

        let mut altered = shares[0].clone();
        altered.payload[2] ^= 0x40;
        assert!(!verify_commitment(&altered));

        let mut reindexed = shares[0].clone();
        reindexed.index = 9;
        assert!(!verify_commitment(&reindexed));
    }

    #[test]
    fn uses_lowest_t_indices() {
        let mut rng = det_rng(6);
        let policy = SharingPolicy::new(2, 4).unwrap();
        let secret = b"tie-break".to_vec();
        let mut shares = split(&secret, policy, &mut rng).unwrap();
        // index 4 garbage-but-consistent: excluded by lowest-t rule, so result unaffected
        shares[3] = Share::new(4, vec![0xee; secret.len()]);
        shares.reverse();
        assert_eq!(reconstruct(&shares, policy).unwrap(), secret);
    }

    #[test]
    fn single_octet_privacy_enumeration() {
        // t = 2: fix share 1, enumerate every candidate share-2 payload; each
        // implied secret value must appear exactly once.
        let fixed = Share::new(1, vec![0x5a]);
        let mut counts = [0u32; 256];
        for candidate in 0..=255u8 {
            let other = Share::new(2, vec![candidate]);
            let s = interpolate(&[fixed.clone(), other]);
            counts[s[0] as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn deterministic_for_seed() {
        let policy = SharingPolicy::new(3, 5).unwrap();
        let a = split(b"same", policy, &mut det_rng(9)).unwrap();
        let b = split(b"same", policy, &mut det_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoding_roundtrip() {
        let s = Share::new(7, vec![1, 2, 3, 4]);
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 1 + 4 + 32);
        assert_eq!(Share::from_bytes(&bytes).unwrap(), s);
        assert!(Share::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn default_thresholds() {
        assert_eq!(default_threshold(3), 2);
        assert_eq!(default_threshold(4), 3);
        assert_eq!(default_threshold(5), 4);
        assert_eq!(default_threshold(6), 4);
        assert_eq!(default_threshold(8), 6);
    }

    #[test]
    fn aggregate_zero_fill_changes_digest() {
        let mut rng = det_rng(10);
        let policy = SharingPolicy::new(3, 4).unwrap();
        let shares = split(&[7u8; 32], policy, &mut rng).unwrap();
        let full = aggregate_digest(&shares, 4, &[]);
        assert_eq!(full, aggregate_digest(&shares, 4, &[]));
        assert_ne!(full, aggregate_digest(&shares, 4, &[2]));
    }
}
