//! The authentication protocol.
//!
//! A session runs four phases on the simulated interposer:
//!
//! 1. integrators cross-authenticate each other and the survivors form the
//!    trust tree;
//! 2. the tree root splits every third-party chiplet's expected session digest
//!    into `t`-of-`n` shares and sends one to each trusted integrator;
//! 3. every trusted integrator challenges every third-party chiplet in
//!    parallel and compares the response with the digest reconstructed from
//!    the pooled shares;
//! 4. anything short of a clean quorum is re-authenticated over disjoint
//!    routes until it can be pinned on the chiplet or on the interconnect.

mod diagnosis;
mod engine;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chiplet::{ChipletError, ChipletId, Manifest, Role};
use crate::crypto::{u128_hex, Digest256};
use crate::net::{Message, NetError, Path, Topology};
use crate::sharing::{SharingError, SharingPolicy};

pub use diagnosis::{Classification, Evidence, FaultDiagnosis, RouteFallback, DEGRADED_FLAG};
pub use engine::Engine;
pub use replay::{ReplayGuard, ResponseCheck};

use crate::chiplet::Chiplet;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("insufficient trusted integrators: {survivors} survived cross-authentication, need at least 3")]
    InsufficientTrustedIntegrators { survivors: usize },
    #[error("share distribution failed: integrator {0}")]
    ShareDistributionFailed(ChipletId),
    #[error("chiplet {0} is not a third-party chiplet")]
    NotThirdParty(ChipletId),
    #[error("unknown chiplet {0}")]
    UnknownChiplet(ChipletId),
    #[error("chiplet {0} already present")]
    DuplicateChiplet(ChipletId),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Chiplet(#[from] ChipletError),
}

/// Quorum selection: two-thirds of the surviving integrators, or a fixed `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Quorum {
    #[default]
    Auto,
    Fixed {
        t: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub quorum: Quorum,
    pub signature_length_bits: usize,
    pub fanout: usize,
    pub clock_ghz: f64,
    pub hash_cycles: u64,
    pub link_latency: u64,
    /// No-response timeout as a multiple of `hash_cycles`.
    pub timeout_factor: u64,
    /// Localization rounds before falling back to ChipletFault.
    pub max_rounds: u32,
    pub puf_bit_error_rate: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            quorum: Quorum::Auto,
            signature_length_bits: 256,
            fanout: 2,
            clock_ghz: 1.0,
            hash_cycles: crate::chiplet::DEFAULT_HASH_CYCLES,
            link_latency: crate::net::DEFAULT_LINK_LATENCY,
            timeout_factor: 10,
            max_rounds: 3,
            puf_bit_error_rate: 0.0,
        }
    }
}

impl ProtocolConfig {
    pub fn timeout_cycles(&self) -> u64 {
        self.timeout_factor * self.hash_cycles
    }

    pub fn policy_for(&self, n: usize) -> Result<SharingPolicy, SharingError> {
        match self.quorum {
            Quorum::Auto => SharingPolicy::two_thirds(n),
            Quorum::Fixed { t } => SharingPolicy::new(t, n),
        }
    }
}

/// The system under test: interposer, the chiplets as actually assembled, and
/// the designer's golden manifest.
#[derive(Debug, Clone)]
pub struct Sip {
    pub topology: Topology,
    pub chiplets: BTreeMap<ChipletId, Chiplet>,
    pub manifest: Manifest,
}

impl Sip {
    pub fn integrators(&self) -> Vec<ChipletId> {
        self.ids_with_role(Role::Integrator)
    }

    pub fn third_party(&self) -> Vec<ChipletId> {
        self.ids_with_role(Role::ThirdParty)
    }

    fn ids_with_role(&self, role: Role) -> Vec<ChipletId> {
        self.chiplets
            .values()
            .filter(|c| c.role == role)
            .map(|c| c.id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustTree {
    pub root_set: Vec<ChipletId>,
    pub fanout: usize,
    pub levels: Vec<Vec<ChipletId>>,
    pub quorum: SharingPolicy,
}

impl TrustTree {
    /// Up to eight integrators stay flat; larger sets are laid out level by
    /// level with `fanout` children per node.
    pub fn new(root_set: Vec<ChipletId>, fanout: usize, quorum: SharingPolicy) -> Self {
        let fanout = fanout.max(2);
        let levels = if root_set.len() <= 8 {
            vec![root_set.clone()]
        } else {
            let mut levels = Vec::new();
            let mut rest = root_set.as_slice();
            let mut width = 1;
            while !rest.is_empty() {
                let take = width.min(rest.len());
                levels.push(rest[..take].to_vec());
                rest = &rest[take..];
                width *= fanout;
            }
            levels
        };
        TrustTree {
            root_set,
            fanout,
            levels,
            quorum,
        }
    }

    pub fn root(&self) -> ChipletId {
        self.root_set[0]
    }

    pub fn contains(&self, id: ChipletId) -> bool {
        self.root_set.contains(&id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Match,
    Mismatch,
    NoResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorVerdict {
    pub integrator_id: ChipletId,
    pub target_id: ChipletId,
    pub outcome: Outcome,
    pub observed_digest: Option<Digest256>,
    pub route_used: usize,
    pub route: Path,
    pub cycles_spent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnomalyCause {
    /// Outcomes disagree or some integrators heard nothing.
    Inconsistent,
    /// Tree members kept their shares back.
    DosSuspected { withheld: Vec<ChipletId> },
    /// Shares that fail their commitment.
    CorruptShare { holders: Vec<ChipletId> },
}

/// Result of one quorum round for one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumResult {
    pub target_id: ChipletId,
    pub verdict: Verdict,
    pub cause: Option<AnomalyCause>,
    pub verdicts: Vec<IntegratorVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipletReport {
    pub id: ChipletId,
    pub role: Role,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub first_round: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cause: Option<AnomalyCause>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnosis: Option<FaultDiagnosis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Phases {
    pub cross_auth: Span,
    pub distribution: Span,
    pub authentication: Span,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub localization: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthReport {
    pub schema: u32,
    pub session_id: u64,
    #[serde(with = "u128_hex")]
    pub nonce: u128,
    pub quorum: SharingPolicy,
    pub trusted_integrators: Vec<ChipletId>,
    pub excluded_integrators: Vec<ChipletId>,
    pub chiplets: Vec<ChipletReport>,
    pub first_round: Vec<IntegratorVerdict>,
    pub shares_issued: usize,
    pub distribution_retries: u32,
    pub duplicate_responses: u32,
    pub phases: Phases,
    pub aggregation_cycles: u64,
    pub total_cycles: u64,
    pub critical_path_cycles: u64,
    pub session_cycles: u64,
    pub clock_ghz: f64,
    pub transcripts: Vec<Message>,
}

pub const REPORT_SCHEMA: u32 = 1;

impl AuthReport {
    pub fn chiplet(&self, id: ChipletId) -> Option<&ChipletReport> {
        self.chiplets.iter().find(|c| c.id == id)
    }

    pub fn diagnoses(&self) -> impl Iterator<Item = &FaultDiagnosis> {
        self.chiplets.iter().filter_map(|c| c.diagnosis.as_ref())
    }

    pub fn third_party(&self) -> impl Iterator<Item = &ChipletReport> {
        self.chiplets.iter().filter(|c| c.role == Role::ThirdParty)
    }

    pub fn all_authenticated(&self) -> bool {
        self.chiplets.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn rejected(&self) -> Vec<ChipletId> {
        self.chiplets
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.id)
            .collect()
    }
}

/// Comparator cycles to fold `fan_in` verdicts through a tree of the given
/// fanout: one cycle up to a fan-in of two, else the tree depth.
pub fn aggregation_cycles(fan_in: usize, fanout: usize) -> u64 {
    if fan_in <= 2 {
        return 1;
    }
    let fanout = fanout.max(2);
    let mut depth = 0u64;
    let mut reach = 1usize;
    while reach < fan_in {
        reach = reach.saturating_mul(fanout);
        depth += 1;
    }
    depth
}

/// Critical-path cycles of the authentication round and the matching wall time.
pub fn latency_model(report: &AuthReport, clock_ghz: f64) -> (u64, f64) {
    let cycles = report.critical_path_cycles;
    (cycles, cycles as f64 / clock_ghz)
}

/// Runs a complete session (session 1 of the run keyed by `seed`).
pub fn authenticate_sip(
    sip: &Sip,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<AuthReport, ProtocolError> {
    let mut engine = Engine::new(sip.clone(), config.clone(), seed);
    engine.run()
}
