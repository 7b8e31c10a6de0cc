//! Interposer model: topology, link-disjoint routes, message delivery with
//! per-link fault state, and the discrete-event queue that orders deliveries.

mod events;
mod layout;
mod routing;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chiplet::ChipletId;
use crate::crypto::flip_bits;

pub use events::EventQueue;
pub use layout::{clique_links, mesh_links, star_links, Layout};
pub use routing::{path_links, Path};

/// Upper bound on a single message payload.
pub const MAX_PAYLOAD: usize = 4096;
pub const DEFAULT_LINK_LATENCY: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unreachable: no path from {src} to {dst}")]
    Unreachable { src: ChipletId, dst: ChipletId },
    #[error("source and destination are the same node ({0})")]
    SameEndpoints(ChipletId),
    #[error("unknown node {0}")]
    UnknownNode(ChipletId),
    #[error("unknown link {0}")]
    UnknownLink(Link),
    #[error("duplicate link {0}")]
    DuplicateLink(Link),
    #[error("no such route: index {index}, {available} available")]
    NoSuchRoute { index: usize, available: usize },
    #[error("payload of {0} octets exceeds the 4 KiB bound")]
    PayloadTooLarge(usize),
}

/// Undirected link, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[ChipletId; 2]", into = "[ChipletId; 2]")]
pub struct Link {
    pub a: ChipletId,
    pub b: ChipletId,
}

impl Link {
    pub fn new(x: ChipletId, y: ChipletId) -> Self {
        Link {
            a: x.min(y),
            b: x.max(y),
        }
    }

    pub fn touches(&self, id: ChipletId) -> bool {
        self.a == id || self.b == id
    }
}

impl From<[ChipletId; 2]> for Link {
    fn from(v: [ChipletId; 2]) -> Self {
        Link::new(v[0], v[1])
    }
}

impl From<Link> for [ChipletId; 2] {
    fn from(l: Link) -> Self {
        [l.a, l.b]
    }
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    #[default]
    Healthy,
    Dropping,
    /// Inverts these payload bit positions (bit 0 = MSB of octet 0).
    Corrupting(Vec<usize>),
    /// Adds this many cycles on top of the base latency.
    Delaying(u64),
}

/// A link state that overrides the base state during `[from_cycle, to_cycle)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub link: Link,
    pub state: LinkState,
    #[serde(default)]
    pub from_cycle: u64,
    #[serde(default)]
    pub to_cycle: Option<u64>,
}

impl ScheduledFault {
    pub fn active_at(&self, cycle: u64) -> bool {
        cycle >= self.from_cycle && self.to_cycle.is_none_or(|end| cycle < end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Challenge,
    Response,
    Share,
    Verdict,
    Replayed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub src: ChipletId,
    pub dst: ChipletId,
    pub kind: MessageKind,
    #[serde(with = "hex_payload")]
    pub payload: Vec<u8>,
    pub session_id: u64,
    pub emit_cycle: u64,
}

impl Message {
    pub fn new(
        src: ChipletId,
        dst: ChipletId,
        kind: MessageKind,
        payload: Vec<u8>,
        session_id: u64,
        emit_cycle: u64,
    ) -> Result<Self, NetError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(NetError::PayloadTooLarge(payload.len()));
        }
        Ok(Message {
            src,
            dst,
            kind,
            payload,
            session_id,
            emit_cycle,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Delivered {
        payload: Vec<u8>,
        arrival_cycle: u64,
    },
    Dropped,
    Corrupted {
        payload: Vec<u8>,
        arrival_cycle: u64,
    },
}

impl DeliveryOutcome {
    pub fn payload(&self) -> Option<&[u8]> {
        match self {
            DeliveryOutcome::Delivered { payload, .. }
            | DeliveryOutcome::Corrupted { payload, .. } => Some(payload),
            DeliveryOutcome::Dropped => None,
        }
    }

    pub fn arrival_cycle(&self) -> Option<u64> {
        match self {
            DeliveryOutcome::Delivered { arrival_cycle, .. }
            | DeliveryOutcome::Corrupted { arrival_cycle, .. } => Some(*arrival_cycle),
            DeliveryOutcome::Dropped => None,
        }
    }
}

type RouteCache = Arc<Mutex<BTreeMap<(ChipletId, ChipletId), Arc<Vec<Path>>>>>;

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: BTreeSet<ChipletId>,
    links: BTreeMap<Link, LinkState>,
    schedule: Vec<ScheduledFault>,
    link_latency: u64,
    // Routes depend only on the link set, which is fixed after construction.
    route_cache: RouteCache,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.links == other.links
            && self.schedule == other.schedule
            && self.link_latency == other.link_latency
    }
}

impl Topology {
    pub fn new(
        nodes: impl IntoIterator<Item = ChipletId>,
        links: impl IntoIterator<Item = Link>,
    ) -> Result<Self, NetError> {
        let nodes: BTreeSet<ChipletId> = nodes.into_iter().collect();
        let mut map = BTreeMap::new();
        for link in links {
            for end in [link.a, link.b] {
                if !nodes.contains(&end) {
                    return Err(NetError::UnknownNode(end));
                }
            }
            if link.a == link.b {
                return Err(NetError::SameEndpoints(link.a));
            }
            if map.insert(link, LinkState::Healthy).is_some() {
                return Err(NetError::DuplicateLink(link));
            }
        }
        Ok(Topology {
            nodes,
            links: map,
            schedule: Vec::new(),
            link_latency: DEFAULT_LINK_LATENCY,
            route_cache: Arc::default(),
        })
    }

    pub fn with_link_latency(mut self, cycles: u64) -> Self {
        self.link_latency = cycles;
        self
    }

    pub fn link_latency(&self) -> u64 {
        self.link_latency
    }

    pub fn nodes(&self) -> &BTreeSet<ChipletId> {
        &self.nodes
    }

    pub fn links(&self) -> impl Iterator<Item = (&Link, &LinkState)> {
        self.links.iter()
    }

    pub fn contains_link(&self, link: &Link) -> bool {
        self.links.contains_key(link)
    }

    pub fn link_state(&self, link: &Link) -> Option<&LinkState> {
        self.links.get(link)
    }

    pub fn schedule(&self) -> &[ScheduledFault] {
        &self.schedule
    }

    pub fn add_scheduled_fault(&mut self, fault: ScheduledFault) -> Result<(), NetError> {
        if !self.links.contains_key(&fault.link) {
            return Err(NetError::UnknownLink(fault.link));
        }
        self.schedule.push(fault);
        Ok(())
    }

    /// State of `link` at `cycle`: the first active scheduled fault, else the base state.
    pub fn effective_state(&self, link: &Link, cycle: u64) -> &LinkState {
        self.schedule
            .iter()
            .find(|f| f.link == *link && f.active_at(cycle))
            .map(|f| &f.state)
            .unwrap_or_else(|| self.links.get(link).unwrap_or(&LinkState::Healthy))
    }

    /// Replaces the base state of `link`, returning the previous one.
    pub fn inject_link_fault(
        &mut self,
        link: Link,
        state: LinkState,
    ) -> Result<LinkState, NetError> {
        let slot = self
            .links
            .get_mut(&link)
            .ok_or(NetError::UnknownLink(link))?;
        Ok(std::mem::replace(slot, state))
    }

    /// Adds a node and its links. Cached routes are discarded.
    pub fn add_node(&mut self, id: ChipletId, links: &[Link]) -> Result<(), NetError> {
        self.nodes.insert(id);
        for link in links {
            for end in [link.a, link.b] {
                if !self.nodes.contains(&end) {
                    return Err(NetError::UnknownNode(end));
                }
            }
            if self.links.insert(*link, LinkState::Healthy).is_some() {
                return Err(NetError::DuplicateLink(*link));
            }
        }
        self.route_cache = Arc::default();
        Ok(())
    }

    /// Every link-disjoint path from `src` to `dst`, shortest first, ties in
    /// lexicographic node order.
    pub fn routes(&self, src: ChipletId, dst: ChipletId) -> Result<Arc<Vec<Path>>, NetError> {
        if src == dst {
            return Err(NetError::SameEndpoints(src));
        }
        for id in [src, dst] {
            if !self.nodes.contains(&id) {
                return Err(NetError::UnknownNode(id));
            }
        }
        let mut cache = self.route_cache.lock().expect("route cache poisoned");
        let paths = cache.entry((src, dst)).or_insert_with(|| {
            let links: BTreeSet<Link> = self.links.keys().copied().collect();
            Arc::new(routing::link_disjoint_paths(&self.nodes, &links, src, dst))
        });
        if paths.is_empty() {
            return Err(NetError::Unreachable { src, dst });
        }
        Ok(Arc::clone(paths))
    }

    /// Sends `msg` along route `path_index` of `routes(msg.src, msg.dst)`.
    pub fn transmit(&self, msg: &Message, path_index: usize) -> Result<DeliveryOutcome, NetError> {
        let routes = self.routes(msg.src, msg.dst)?;
        let path = routes.get(path_index).ok_or(NetError::NoSuchRoute {
            index: path_index,
            available: routes.len(),
        })?;
        self.transmit_along(msg, path)
    }

    /// Sends `msg` along an explicit node sequence.
    pub fn transmit_along(
        &self,
        msg: &Message,
        path: &[ChipletId],
    ) -> Result<DeliveryOutcome, NetError> {
        let mut payload = msg.payload.clone();
        let mut cycle = msg.emit_cycle;
        let mut corrupted = false;
        for link in path_links(path) {
            if !self.links.contains_key(&link) {
                return Err(NetError::UnknownLink(link));
            }
            let mut hop = self.link_latency;
            match self.effective_state(&link, cycle) {
                LinkState::Healthy => {}
                LinkState::Dropping => return Ok(DeliveryOutcome::Dropped),
                LinkState::Corrupting(bits) => {
                    let in_range: Vec<usize> = bits
                        .iter()
                        .copied()
                        .filter(|&b| b < payload.len() * 8)
                        .collect();
                    payload = flip_bits(&payload, &in_range).expect("filtered to payload length");
                    corrupted |= !in_range.is_empty();
                }
                LinkState::Delaying(extra) => hop += extra,
            }
            cycle += hop;
        }
        Ok(if corrupted && payload != msg.payload {
            DeliveryOutcome::Corrupted {
                payload,
                arrival_cycle: cycle,
            }
        } else {
            DeliveryOutcome::Delivered {
                payload,
                arrival_cycle: cycle,
            }
        })
    }

    /// Connectivity over links whose base state is Healthy.
    pub fn is_connected_healthy(&self) -> bool {
        let Some(&start) = self.nodes.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for (link, state) in &self.links {
                if *state != LinkState::Healthy || !link.touches(u) {
                    continue;
                }
                let v = if link.a == u { link.b } else { link.a };
                if seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

mod hex_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
