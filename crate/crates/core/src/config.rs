//! Scenario files: topology, chiplet behaviours, protocol parameters and the
//! attack sweep, as one JSON document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chiplet::{Behavior, Chiplet, ChipletId, Manifest, Role};
use crate::crypto::{sha256, Sha256};
use crate::net::{Layout, Link, ScheduledFault, Topology};
use crate::protocol::{ProtocolConfig, Quorum, Sip};

pub const SCENARIO_SCHEMA: u32 = 1;

/// A diagnostic pointing at the offending line when one can be found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }

    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: ChipletId,
    pub role: Role,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_cycles: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Link>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<ScheduledFault>,
    /// Reject topologies where some integrator reaches some third-party chiplet
    /// over a single route only.
    #[serde(default)]
    pub require_localization_coverage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    BitFlip,
    ShareRemoval,
    Replay,
    Clone,
    Silent,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::BitFlip => "bit_flip",
            AttackKind::ShareRemoval => "share_removal",
            AttackKind::Replay => "replay",
            AttackKind::Clone => "clone",
            AttackKind::Silent => "silent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kinds: Vec<AttackKind>,
    pub lengths: Vec<usize>,
    pub trials: usize,
    /// Bits flipped per bit-flip trial.
    pub flips: usize,
    /// Share-removal pooling: strict rejects any missing share, degraded
    /// zero-fills it.
    pub degraded: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kinds: vec![
                AttackKind::BitFlip,
                AttackKind::ShareRemoval,
                AttackKind::Replay,
            ],
            lengths: vec![64, 128, 256, 512],
            trials: 1000,
            flips: 1,
            degraded: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub attacks: AttackSpec,
}

impl ScenarioConfig {
    /// Parses and validates. Errors carry the line of the offending entry.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::at(Some(e.line()).filter(|&l| l > 0), e.to_string()))?;
        cfg.validate_with_source(Some(text))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, src: Option<&str>) -> Result<(), ConfigError> {
        let key_line = |key: &str| src.and_then(|s| line_of_key(s, key));

        if self.schema != SCENARIO_SCHEMA {
            return Err(ConfigError::at(
                key_line("schema"),
                format!(
                    "unsupported schema {} (expected {SCENARIO_SCHEMA})",
                    self.schema
                ),
            ));
        }
        let topo = &self.topology;
        if topo.nodes.is_empty() {
            return Err(ConfigError::at(key_line("nodes"), "no nodes"));
        }
        let mut ids = BTreeSet::new();
        for node in &topo.nodes {
            if !ids.insert(node.id) {
                let line = src.and_then(|s| line_of_id(s, node.id, 2));
                return Err(ConfigError::at(
                    line,
                    format!("duplicate chiplet id {}", node.id),
                ));
            }
        }

        let p = &self.protocol;
        let integrators = topo
            .nodes
            .iter()
            .filter(|n| n.role == Role::Integrator)
            .count();
        if let Quorum::Fixed { t } = p.quorum {
            if t < 2 || t > integrators {
                return Err(ConfigError::at(
                    key_line("quorum"),
                    format!("threshold out of range: t = {t} with {integrators} integrators"),
                ));
            }
        }
        let checks: [(bool, &str, &str); 8] = [
            (
                p.signature_length_bits == 0,
                "signature_length_bits",
                "signature_length_bits must be positive",
            ),
            (
                p.hash_cycles == 0,
                "hash_cycles",
                "hash_cycles must be at least 1",
            ),
            (
                p.link_latency == 0,
                "link_latency",
                "link_latency must be at least 1",
            ),
            (p.fanout < 2, "fanout", "fanout must be at least 2"),
            (
                !(p.clock_ghz > 0.0 && p.clock_ghz.is_finite()),
                "clock_ghz",
                "clock_ghz must be positive",
            ),
            (
                !(0.0..=1.0).contains(&p.puf_bit_error_rate),
                "puf_bit_error_rate",
                "puf_bit_error_rate must lie in [0, 1]",
            ),
            (
                p.timeout_factor == 0,
                "timeout_factor",
                "timeout_factor must be at least 1",
            ),
            (
                p.max_rounds == 0,
                "max_rounds",
                "max_rounds must be at least 1",
            ),
        ];
        for (bad, key, msg) in checks {
            if bad {
                return Err(ConfigError::at(key_line(key), msg));
            }
        }

        for node in &topo.nodes {
            if node.hash_cycles == Some(0) {
                return Err(ConfigError::at(
                    src.and_then(|s| line_of_id(s, node.id, 1)),
                    format!("chiplet {}: hash_cycles must be at least 1", node.id),
                ));
            }
            if let Behavior::Tampered { positions } = &node.behavior {
                let mut seen = BTreeSet::new();
                for &pos in positions {
                    if pos >= p.signature_length_bits || !seen.insert(pos) {
                        return Err(ConfigError::at(
                            src.and_then(|s| line_of_id(s, node.id, 1)),
                            format!("chiplet {}: invalid tamper position {pos}", node.id),
                        ));
                    }
                }
            }
            if matches!(node.behavior, Behavior::Colluding | Behavior::Withholding)
                && node.role != Role::Integrator
            {
                return Err(ConfigError::at(
                    src.and_then(|s| line_of_id(s, node.id, 1)),
                    format!("chiplet {}: behaviour applies to integrators only", node.id),
                ));
            }
        }

        let links = match (&topo.edges, topo.layout) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::at(
                    key_line("layout"),
                    "give either edges or layout, not both",
                ))
            }
            (None, None) => {
                return Err(ConfigError::at(
                    key_line("topology"),
                    "topology needs edges or a layout",
                ))
            }
            _ => self.links(),
        };
        let mut seen = BTreeSet::new();
        for link in &links {
            for end in [link.a, link.b] {
                if !ids.contains(&end) {
                    return Err(ConfigError::at(
                        key_line("edges"),
                        format!("edge {link} names unknown chiplet {end}"),
                    ));
                }
            }
            if link.a == link.b {
                return Err(ConfigError::at(
                    key_line("edges"),
                    format!("self-loop on chiplet {}", link.a),
                ));
            }
            if !seen.insert(*link) {
                return Err(ConfigError::at(
                    key_line("edges"),
                    format!("duplicate edge {link}"),
                ));
            }
        }
        for fault in &topo.faults {
            if !seen.contains(&fault.link) {
                return Err(ConfigError::at(
                    key_line("faults"),
                    format!("fault on missing link {}", fault.link),
                ));
            }
            if fault.to_cycle.is_some_and(|end| end <= fault.from_cycle) {
                return Err(ConfigError::at(
                    key_line("faults"),
                    format!("empty fault window on link {}", fault.link),
                ));
            }
        }

        let topology = Topology::new(ids.iter().copied(), links)
            .map_err(|e| ConfigError::new(e.to_string()))?;
        if !topology.is_connected_healthy() {
            return Err(ConfigError::at(
                key_line("topology"),
                "topology is not connected",
            ));
        }
        if topo.require_localization_coverage {
            for i in topo.nodes.iter().filter(|n| n.role == Role::Integrator) {
                for t in topo.nodes.iter().filter(|n| n.role == Role::ThirdParty) {
                    let routes = topology
                        .routes(i.id, t.id)
                        .map_err(|e| ConfigError::new(e.to_string()))?;
                    if routes.len() < 2 {
                        return Err(ConfigError::at(
                            key_line("require_localization_coverage"),
                            format!("localization coverage: integrator {} reaches chiplet {} over one route only", i.id, t.id),
                        ));
                    }
                }
            }
        }

        let a = &self.attacks;
        if a.trials == 0 {
            return Err(ConfigError::at(
                key_line("trials"),
                "trials must be at least 1",
            ));
        }
        if let Some(&bad) = a.lengths.iter().find(|&&l| l == 0) {
            return Err(ConfigError::at(
                key_line("lengths"),
                format!("invalid signature length {bad}"),
            ));
        }
        if a.flips == 0 || a.lengths.iter().any(|&l| a.flips > l) {
            return Err(ConfigError::at(
                key_line("flips"),
                "flips must lie in [1, signature length]",
            ));
        }
        Ok(())
    }

    /// The effective link list: explicit edges or the layout's wiring.
    pub fn links(&self) -> Vec<Link> {
        if let Some(edges) = &self.topology.edges {
            return edges.clone();
        }
        let ids_of = |role| {
            let mut v: Vec<ChipletId> = self
                .topology
                .nodes
                .iter()
                .filter(|n| n.role == role)
                .map(|n| n.id)
                .collect();
            v.sort_unstable();
            v
        };
        self.topology
            .layout
            .map(|l| l.links(&ids_of(Role::Integrator), &ids_of(Role::ThirdParty)))
            .unwrap_or_default()
    }

    /// Seed from the file, else the caller's fallback.
    pub fn effective_seed(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    pub fn build_sip(&self, seed: u64) -> Result<Sip, ConfigError> {
        self.validate()?;
        let nodes: Vec<(ChipletId, Role, Behavior, Option<u64>)> = self
            .topology
            .nodes
            .iter()
            .map(|n| (n.id, n.role, n.behavior.clone(), n.hash_cycles))
            .collect();
        let mut sip =
            assemble(&nodes, self.links(), &self.protocol, seed).map_err(ConfigError::new)?;
        for fault in &self.topology.faults {
            sip.topology
                .add_scheduled_fault(fault.clone())
                .map_err(|e| ConfigError::new(e.to_string()))?;
        }
        Ok(sip)
    }
}

/// The single enrollment challenge for a run.
pub fn enrollment_challenge(seed: u64) -> u128 {
    let mut m = b"authentree/challenge".to_vec();
    m.extend_from_slice(&seed.to_be_bytes());
    let d = sha256(&m);
    u128::from_be_bytes(d.0[..16].try_into().expect("16 octets"))
}

fn counterfeit_secret(seed: u64, id: ChipletId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"authentree/counterfeit");
    h.update(&seed.to_be_bytes());
    h.update(&id.to_be_bytes());
    h.finalize()
}

/// Builds a SiP: genuine parts are enrolled first, then behaviours are
/// applied to the assembled population.
pub fn assemble(
    nodes: &[(ChipletId, Role, Behavior, Option<u64>)],
    links: Vec<Link>,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<Sip, String> {
    let genuine: Vec<Chiplet> = nodes
        .iter()
        .map(|(id, role, _, cycles)| {
            let mut c = Chiplet::genuine(*id, *role, seed, protocol.signature_length_bits)
                .with_hash_cycles(cycles.unwrap_or(protocol.hash_cycles));
            c.puf_bit_error_rate = protocol.puf_bit_error_rate;
            c
        })
        .collect();
    let manifest = Manifest::enroll(&genuine, enrollment_challenge(seed));

    let mut chiplets = BTreeMap::new();
    for (chiplet, (_, _, behavior, _)) in genuine.into_iter().zip(nodes) {
        let installed = match behavior {
            Behavior::Counterfeit => chiplet.counterfeit(counterfeit_secret(seed, chiplet.id)),
            other => chiplet.with_behavior(other.clone()),
        };
        if chiplets.insert(installed.id, installed).is_some() {
            return Err("duplicate chiplet id".into());
        }
    }
    let topology = Topology::new(chiplets.keys().copied(), links)
        .map_err(|e| e.to_string())?
        .with_link_latency(protocol.link_latency);
    Ok(Sip {
        topology,
        chiplets,
        manifest,
    })
}

/// Convenience for a SiP with a stock layout and every part genuine.
pub fn stock_sip(
    integrators: usize,
    third_party: usize,
    layout: Layout,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Sip {
    let integ: Vec<ChipletId> = (1..=integrators as u64).collect();
    let third: Vec<ChipletId> = (0..third_party as u64).map(|k| 100 + k).collect();
    let nodes: Vec<_> = integ
        .iter()
        .map(|&id| (id, Role::Integrator, Behavior::Genuine, None))
        .chain(
            third
                .iter()
                .map(|&id| (id, Role::ThirdParty, Behavior::Genuine, None)),
        )
        .collect();
    assemble(&nodes, layout.links(&integ, &third), protocol, seed)
        .expect("stock layout is well formed")
}

fn line_of_key(src: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Line of the `nth` (1-based) node entry whose `"id"` is `id`.
fn line_of_id(src: &str, id: ChipletId, nth: usize) -> Option<usize> {
    let mut count = 0;
    for (i, line) in src.lines().enumerate() {
        let mut rest = line;
        while let Some(pos) = rest.find("\"id\"") {
            rest = &rest[pos + 4..];
            let value = rest
                .trim_start()
                .strip_prefix(':')
                .map(str::trim_start)
                .unwrap_or("");
            let digits: String = value.chars().take_while(char::is_ascii_digit).collect();
            if digits.parse::<ChipletId>().ok() == Some(id) {
                count += 1;
                if count == nth {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "schema": 1,
  "seed": 7,
  "topology": {
    "nodes": [
      {"id": 1, "role": "integrator"},
      {"id": 2, "role": "integrator"},
      {"id": 3, "role": "integrator"},
      {"id": 10, "role": "third_party"}
    ],
    "layout": "star"
  }
}"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ScenarioConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.links().len(), 3);
        let sip = cfg.build_sip(7).unwrap();
        assert_eq!(sip.integrators(), vec![1, 2, 3]);
        assert_eq!(sip.manifest.entries.len(), 4);
        assert_eq!(cfg.attacks.lengths, vec![64, 128, 256, 512]);
    }

    #[test]
    fn duplicate_id_is_named_with_line() {
        let text = BASE.replace(
            r#"{"id": 10, "role": "third_party"}"#,
            r#"{"id": 2, "role": "third_party"}"#,
        );
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert_eq!(err.line, Some(9));
        assert!(err.to_string().contains("duplicate chiplet id 2"), "{err}");
    }

    #[test]
    fn threshold_out_of_range() {
        let text = BASE.replace(
            r#""seed": 7,"#,
            r#""seed": 7, "protocol": {"quorum": {"fixed": {"t": 4}}},"#,
        );
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert!(err.message.contains("threshold out of range"), "{err}");
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn syntax_errors_carry_line() {
        let text = BASE.replace(r#""layout": "star""#, r#""layout": star"#);
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert_eq!(err.line, Some(11));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = BASE.replace(r#""seed": 7,"#, r#""seed": 7, "sede": 8,"#);
        assert!(ScenarioConfig::from_json(&text).is_err());
    }

    #[test]
    fn coverage_requirement() {
        let text = BASE.replace(
            r#""layout": "star""#,
            r#""layout": "star", "require_localization_coverage": true"#,
        );
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert!(err.message.contains("localization coverage"), "{err}");
    }

    #[test]
    fn counterfeit_differs_from_manifest() {
        let text = BASE.replace(
            r#"{"id": 10, "role": "third_party"}"#,
            r#"{"id": 10, "role": "third_party", "behavior": "counterfeit"}"#,
        );
        let sip = ScenarioConfig::from_json(&text)
            .unwrap()
            .build_sip(7)
            .unwrap();
        let c = &sip.chiplets[&10];
        assert_ne!(
            &c.generate_signature(sip.manifest.challenge),
            sip.manifest.signature(10).unwrap()
        );
    }
}
