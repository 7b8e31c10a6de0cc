//! Behavioural chiplet model: PUF-backed signatures, a local hash engine with
//! a fixed cycle cost, and the golden manifest verifiers check against.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, det_rng, session_digest, Digest256, SessionContext, Sha256, Signature};

pub type ChipletId = u64;

/// Cycle cost of one SHA-256 digest on the chiplet hash core.
pub const DEFAULT_HASH_CYCLES: u64 = 96;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChipletError {
    #[error("chiplet not in manifest: {0}")]
    NotInManifest(ChipletId),
    #[error("challenge {0:032x} is not the enrolled challenge")]
    ChallengeNotEnrolled(u128),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Integrator,
    ThirdParty,
}

/// How a chiplet behaves during a run. Only `Genuine` is honest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Genuine,
    /// Substituted die: follows the protocol but carries a different PUF.
    Counterfeit,
    /// Never answers challenges.
    Silent,
    /// Signature bits flipped before hashing (fault injection).
    Tampered { positions: Vec<usize> },
    /// Integrator that reports Match for every target regardless of evidence.
    Colluding,
    /// Integrator that keeps its shares out of every pooling step.
    Withholding,
}

#[derive(Clone)]
pub struct Chiplet {
    pub id: ChipletId,
    pub role: Role,
    puf_secret: [u8; 32],
    pub hash_cycles: u64,
    pub signature_bits: usize,
    pub behavior: Behavior,
    pub puf_bit_error_rate: f64,
    busy_cycles: u64,
}

impl fmt::Debug for Chiplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chiplet")
            .field("id", &self.id)
            .field("role", &self.role)
            .field("hash_cycles", &self.hash_cycles)
            .field("signature_bits", &self.signature_bits)
            .field("behavior", &self.behavior)
            .finish_non_exhaustive()
    }
}

/// Device-unique PUF secret of the genuine part with this id.
pub fn genuine_secret(seed: u64, id: ChipletId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"authentree/puf");
    h.update(&seed.to_be_bytes());
    h.update(&id.to_be_bytes());
    h.finalize()
}

impl Chiplet {
    pub fn new(id: ChipletId, role: Role, puf_secret: [u8; 32], signature_bits: usize) -> Self {
        assert!(signature_bits > 0, "signature length must be positive");
        Chiplet {
            id,
            role,
            puf_secret,
            hash_cycles: DEFAULT_HASH_CYCLES,
            signature_bits,
            behavior: Behavior::Genuine,
            puf_bit_error_rate: 0.0,
            busy_cycles: 0,
        }
    }

    pub fn genuine(id: ChipletId, role: Role, seed: u64, signature_bits: usize) -> Self {
        Self::new(id, role, genuine_secret(seed, id), signature_bits)
    }

    /// Same id and role, different silicon.
    pub fn counterfeit(&self, puf_secret: [u8; 32]) -> Self {
        let mut c = self.clone();
        c.puf_secret = puf_secret;
        c.behavior = Behavior::Counterfeit;
        c.busy_cycles = 0;
        c
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn with_hash_cycles(mut self, cycles: u64) -> Self {
        assert!(cycles >= 1, "hash_cycles must be >= 1");
        self.hash_cycles = cycles;
        self
    }

    pub fn is_honest(&self) -> bool {
        self.behavior == Behavior::Genuine
    }

    pub fn busy_cycles(&self) -> u64 {
        self.busy_cycles
    }

    /// For trace-scan checks only: the raw secret must never leave the model.
    #[cfg(test)]
    pub(crate) fn secret_for_test(&self) -> [u8; 32] {
        self.puf_secret
    }

    pub(crate) fn secret_matches(&self, other: &Chiplet) -> bool {
        self.puf_secret == other.puf_secret
    }

    pub fn generate_signature(&self, challenge: u128) -> Signature {
        puf_signature(&self.puf_secret, challenge, self.signature_bits)
    }

    /// Digest this chiplet returns for `challenge` in session `ctx`, or `None`
    /// when it stays silent. Each computed digest costs `hash_cycles`.
    pub fn respond_to_auth(&mut self, challenge: u128, ctx: &SessionContext) -> Option<Digest256> {
        if self.behavior == Behavior::Silent {
            return None;
        }
        let mut sig = self.generate_signature(challenge);
        if let Behavior::Tampered { positions } = &self.behavior {
            sig = sig
                .with_flipped_bits(positions)
                .expect("tamper positions validated at install time");
        }
        if self.puf_bit_error_rate > 0.0 {
            sig = self.add_puf_noise(sig, ctx);
        }
        self.busy_cycles += self.hash_cycles;
        Some(session_digest(&sig, ctx, self.id))
    }

    // Noise is keyed on the session so repeated runs stay reproducible.
    fn add_puf_noise(&self, sig: Signature, ctx: &SessionContext) -> Signature {
        let mut seed_material = self.puf_secret.to_vec();
        seed_material.extend_from_slice(&ctx.nonce.to_be_bytes());
        let d = crypto::sha256(&seed_material);
        let mut rng = det_rng(u64::from_be_bytes(d.0[..8].try_into().expect("8 octets")));
        let flips: Vec<usize> = (0..sig.bit_len())
            .filter(|_| rng.gen_bool(self.puf_bit_error_rate.min(1.0)))
            .collect();
        sig.with_flipped_bits(&flips)
            .expect("positions within length")
    }
}

/// Ideal noiseless strong PUF: `sha256(secret ‖ challenge)` for the first 256
/// bits, extended by `sha256(secret ‖ challenge ‖ i)` blocks (i = 1, 2, ...,
/// 32-bit big-endian), truncated to `bits`.
pub fn puf_signature(secret: &[u8; 32], challenge: u128, bits: usize) -> Signature {
    let octets = bits.div_ceil(8);
    let mut out = Vec::with_capacity(octets.next_multiple_of(32));
    let mut block: u32 = 0;
    while out.len() < octets {
        let mut h = Sha256::new();
        h.update(secret);
        h.update(&challenge.to_be_bytes());
        if block > 0 {
            h.update(&block.to_be_bytes());
        }
        out.extend_from_slice(&h.finalize());
        block += 1;
    }
    out.truncate(octets);
    Signature::new(out, bits).expect("length computed from bits")
}

/// Golden signatures for the single enrollment challenge, one per chiplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub challenge: u128,
    pub entries: BTreeMap<ChipletId, Signature>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    challenge: String,
    entries: BTreeMap<String, String>,
}

impl Manifest {
    /// Records every chiplet's response to `challenge`. Call on the genuine
    /// population, before any substitution.
    pub fn enroll<'a>(chiplets: impl IntoIterator<Item = &'a Chiplet>, challenge: u128) -> Self {
        let entries = chiplets
            .into_iter()
            .map(|c| (c.id, c.generate_signature(challenge)))
            .collect();
        Manifest { challenge, entries }
    }

    pub fn signature(&self, id: ChipletId) -> Result<&Signature, ChipletError> {
        self.entries.get(&id).ok_or(ChipletError::NotInManifest(id))
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile {
            challenge: format!("{:032x}", self.challenge),
            entries: self
                .entries
                .iter()
                .map(|(id, sig)| (id.to_string(), sig.to_hex()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ChipletError> {
        let file: ManifestFile =
            serde_json::from_str(text).map_err(|e| ChipletError::Manifest(e.to_string()))?;
        let challenge = u128::from_str_radix(&file.challenge, 16)
            .map_err(|e| ChipletError::Manifest(format!("challenge: {e}")))?;
        let mut entries = BTreeMap::new();
        for (id, sig) in file.entries {
            let id: ChipletId = id
                .parse()
                .map_err(|_| ChipletError::Manifest(format!("bad chiplet id {id:?}")))?;
            let bytes = hex::decode(&sig)
                .map_err(|e| ChipletError::Manifest(format!("entry {id}: {e}")))?;
            let sig = Signature::from_bytes(bytes)
                .map_err(|e| ChipletError::Manifest(format!("entry {id}: {e}")))?;
            entries.insert(id, sig);
        }
        Ok(Manifest { challenge, entries })
    }
}

/// Verifier-side golden token for `id` in session `ctx`.
pub fn expected_digest(
    manifest: &Manifest,
    id: ChipletId,
    challenge: u128,
    ctx: &SessionContext,
) -> Result<Digest256, ChipletError> {
    if challenge != manifest.challenge {
        return Err(ChipletError::ChallengeNotEnrolled(challenge));
    }
    let sig = manifest.signature(id)?;
    Ok(session_digest(sig, ctx, id))
}
