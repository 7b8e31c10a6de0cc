//! Turning multi-route re-authentication evidence into a fault classification.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chiplet::ChipletId;
use crate::net::{path_links, Link, Path};

use super::Outcome;

/// One observation: integrator, route and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub round: u32,
    pub integrator_id: ChipletId,
    pub route_index: usize,
    pub route: Path,
    pub outcome: Outcome,
}

impl Evidence {
    pub fn failed(&self) -> bool {
        self.outcome != Outcome::Match
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "links")]
pub enum Classification {
    Authentic,
    ChipletFault,
    LinkFault(Vec<Link>),
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteFallback {
    /// The retry went through a different integrator whose route avoids the failing links.
    AlternateIntegrator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultDiagnosis {
    pub target_id: ChipletId,
    pub classification: Classification,
    pub evidence: Vec<Evidence>,
    pub rounds: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fallback: Option<RouteFallback>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
}

pub const DEGRADED_FLAG: &str = "localization degraded: shared-route evidence only";

/// What one localization round showed.
pub(crate) struct RoundEvidence<'a> {
    /// Dissenters re-tested on the route that failed them.
    pub retests: &'a [Evidence],
    /// Dissenters (or stand-ins) on a route disjoint from the failing one.
    pub alternates: &'a [Evidence],
    /// Agreeing integrators on fresh routes.
    pub controls: &'a [Evidence],
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum Step {
    Resolved(Classification),
    Unresolved,
}

/// Classifies after one localization round.
///
/// * every alternate and control matches: Transient if the failing routes
///   now pass too, otherwise LinkFault on the links only the failing routes use;
/// * every alternate fails and the failures span at least two link-disjoint
///   routes: ChipletFault;
/// * anything else stays unresolved.
pub(crate) fn classify(all_evidence: &[Evidence], round: &RoundEvidence<'_>) -> Step {
    if round.alternates.is_empty() {
        return Step::Unresolved;
    }
    let alternates_match = round.alternates.iter().all(|e| !e.failed());
    let controls_match = round.controls.iter().all(|e| !e.failed());

    if alternates_match && controls_match {
        if round.retests.iter().all(|e| !e.failed()) {
            return Step::Resolved(Classification::Transient);
        }
        let persistent: Vec<&Evidence> = round.retests.iter().filter(|e| e.failed()).collect();
        return Step::Resolved(Classification::LinkFault(suspect_links(
            &persistent,
            all_evidence,
        )));
    }

    if round.alternates.iter().all(Evidence::failed) {
        let failing: Vec<&Path> = all_evidence
            .iter()
            .filter(|e| e.failed())
            .map(|e| &e.route)
            .collect();
        if independent_routes(&failing) >= 2 {
            return Step::Resolved(Classification::ChipletFault);
        }
    }
    Step::Unresolved
}

/// Links common to every persistently failing route and absent from every
/// route that ever matched. When the failing routes share nothing (more than
/// one faulty link), falls back to each route's unexplained links.
pub(crate) fn suspect_links(persistent: &[&Evidence], all_evidence: &[Evidence]) -> Vec<Link> {
    let cleared: BTreeSet<Link> = all_evidence
        .iter()
        .filter(|e| !e.failed())
        .flat_map(|e| path_links(&e.route))
        .collect();

    let mut common: Option<BTreeSet<Link>> = None;
    for e in persistent {
        let links: BTreeSet<Link> = path_links(&e.route).into_iter().collect();
        common = Some(match common {
            None => links,
            Some(c) => c.intersection(&links).copied().collect(),
        });
    }
    let common: BTreeSet<Link> = common
        .unwrap_or_default()
        .difference(&cleared)
        .copied()
        .collect();
    if !common.is_empty() {
        return common.into_iter().collect();
    }
    persistent
        .iter()
        .flat_map(|e| path_links(&e.route))
        .filter(|l| !cleared.contains(l))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Size of a greedy set of pairwise link-disjoint routes.
pub(crate) fn independent_routes(routes: &[&Path]) -> usize {
    let mut unique: Vec<&Path> = routes.to_vec();
    unique.sort_by_key(|p| p.len());
    unique.dedup();
    let mut used: BTreeSet<Link> = BTreeSet::new();
    let mut count = 0;
    for p in unique {
        let links = path_links(p);
        if links.iter().all(|l| !used.contains(l)) {
            used.extend(links);
            count += 1;
        }
    }
    count
}
