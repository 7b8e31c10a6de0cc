use std::collections::{BTreeMap, BTreeSet};

use crate::chiplet::{expected_digest, Behavior, Chiplet, ChipletId, Role};
use crate::crypto::{
    derive_seed, det_rng, DetRng, Digest256, SessionContext, SessionSource, Signature,
};
use crate::net::{
    path_links, DeliveryOutcome, EventQueue, Link, Message, MessageKind, Path, MAX_PAYLOAD,
};
use crate::sharing::{reconstruct, split, verify_commitment, Share, SharingError};

use super::diagnosis::{
    classify, independent_routes, Evidence, RoundEvidence, Step, DEGRADED_FLAG,
};
use super::{
    aggregation_cycles, AnomalyCause, AuthReport, ChipletReport, Classification, FaultDiagnosis,
    IntegratorVerdict, Outcome, Phases, ProtocolConfig, ProtocolError, QuorumResult, ReplayGuard,
    ResponseCheck, RouteFallback, Sip, Span, TrustTree, Verdict, REPORT_SCHEMA,
};

const CHALLENGE_PAYLOAD_LEN: usize = 16 + 16 + 8;
// target id, share index, 32-octet payload, 32-octet commitment
const SHARE_ENTRY_LEN: usize = 8 + 1 + 32 + 32;

fn challenge_payload(challenge: u128, ctx: &SessionContext) -> Vec<u8> {
    let mut p = Vec::with_capacity(CHALLENGE_PAYLOAD_LEN);
    p.extend_from_slice(&challenge.to_be_bytes());
    p.extend_from_slice(&ctx.nonce.to_be_bytes());
    p.extend_from_slice(&ctx.session_id.to_be_bytes());
    p
}

fn parse_challenge(payload: &[u8]) -> Option<(u128, SessionContext)> {
    if payload.len() != CHALLENGE_PAYLOAD_LEN {
        return None;
    }
    let challenge = u128::from_be_bytes(payload[..16].try_into().ok()?);
    let nonce = u128::from_be_bytes(payload[16..32].try_into().ok()?);
    let session_id = u64::from_be_bytes(payload[32..40].try_into().ok()?);
    Some((challenge, SessionContext { session_id, nonce }))
}

#[derive(Debug, Clone)]
struct Probe {
    verifier: ChipletId,
    target: ChipletId,
    route_index: usize,
    path: Path,
    expected: Digest256,
}

#[derive(Debug, Clone)]
struct ProbeResult {
    outcome: Outcome,
    observed: Option<Digest256>,
    /// Cycle by which the verifier has an answer (response arrival or timeout).
    settled: u64,
}

enum Event {
    ChallengeArrives { probe: usize, payload: Vec<u8> },
    ResponseArrives { probe: usize, payload: Vec<u8> },
}

// Target + exact challenge payload -> (digest, ready cycle); None for silence.
type ResponseCache = BTreeMap<(ChipletId, Vec<u8>), Option<(Digest256, u64)>>;

/// Stateful protocol driver for one session on one SiP.
pub struct Engine {
    sip: Sip,
    config: ProtocolConfig,
    ctx: SessionContext,
    rng: DetRng,
    clock: u64,
    transcript: Vec<Message>,
    work_cycles: u64,
    busy_until: BTreeMap<ChipletId, u64>,
    response_cache: ResponseCache,
    holdings: BTreeMap<ChipletId, BTreeMap<ChipletId, Share>>,
    guard: ReplayGuard,
    duplicates: u32,
    distribution_retries: u32,
    shares_issued: usize,
    tree: Option<TrustTree>,
    excluded: Vec<ChipletId>,
    last_critical_path: u64,
    last_aggregation: u64,
}

impl Engine {
    /// Session 1 of the run keyed by `seed`.
    pub fn new(sip: Sip, config: ProtocolConfig, seed: u64) -> Self {
        let ctx = SessionSource::new(seed).next_session();
        Self::with_session(sip, config, seed, ctx)
    }

    pub fn with_session(sip: Sip, config: ProtocolConfig, seed: u64, ctx: SessionContext) -> Self {
        Engine {
            sip,
            config,
            ctx,
            rng: det_rng(derive_seed(seed, "shares", ctx.session_id)),
            clock: 0,
            transcript: Vec::new(),
            work_cycles: 0,
            busy_until: BTreeMap::new(),
            response_cache: BTreeMap::new(),
            holdings: BTreeMap::new(),
            guard: ReplayGuard::new(ctx),
            duplicates: 0,
            distribution_retries: 0,
            shares_issued: 0,
            tree: None,
            excluded: Vec::new(),
            last_critical_path: 0,
            last_aggregation: 0,
        }
    }

    pub fn session(&self) -> &SessionContext {
        &self.ctx
    }

    pub fn sip(&self) -> &Sip {
        &self.sip
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn transcript(&self) -> &[Message] {
        &self.transcript
    }

    pub fn tree(&self) -> Option<&TrustTree> {
        self.tree.as_ref()
    }

    pub fn chiplet_mut(&mut self, id: ChipletId) -> Option<&mut Chiplet> {
        self.sip.chiplets.get_mut(&id)
    }

    /// Shares currently held, by integrator then target.
    pub fn holdings(&self) -> &BTreeMap<ChipletId, BTreeMap<ChipletId, Share>> {
        &self.holdings
    }

    pub fn holdings_mut(&mut self) -> &mut BTreeMap<ChipletId, BTreeMap<ChipletId, Share>> {
        &mut self.holdings
    }

    pub fn distribution_retries(&self) -> u32 {
        self.distribution_retries
    }

    /// Critical path of the most recent quorum round, aggregation included.
    pub fn last_critical_path(&self) -> u64 {
        self.last_critical_path
    }

    fn chiplet(&self, id: ChipletId) -> Result<&Chiplet, ProtocolError> {
        self.sip
            .chiplets
            .get(&id)
            .ok_or(ProtocolError::UnknownChiplet(id))
    }

    fn route(&self, from: ChipletId, to: ChipletId, index: usize) -> Result<Path, ProtocolError> {
        let routes = self.sip.topology.routes(from, to)?;
        Ok(routes.get(index).unwrap_or(&routes[0]).clone())
    }

    fn send(&mut self, msg: Message, path: &[ChipletId]) -> Result<DeliveryOutcome, ProtocolError> {
        let outcome = self.sip.topology.transmit_along(&msg, path)?;
        if let Some(arrival) = outcome.arrival_cycle() {
            self.work_cycles += arrival - msg.emit_cycle;
        }
        self.transcript.push(msg);
        Ok(outcome)
    }

    /// Runs challenge/response probes concurrently from `start`. Each target
    /// hashes every distinct challenge payload once, serially on its own core.
    fn run_probes(
        &mut self,
        probes: &[Probe],
        start: u64,
    ) -> Result<(Vec<ProbeResult>, u64), ProtocolError> {
        let timeout = self.config.timeout_cycles();
        let challenge = self.sip.manifest.challenge;
        let mut queue = EventQueue::new();
        let mut answers: Vec<Option<(Vec<u8>, u64)>> = vec![None; probes.len()];

        for (i, p) in probes.iter().enumerate() {
            let msg = Message::new(
                p.verifier,
                p.target,
                MessageKind::Challenge,
                challenge_payload(challenge, &self.ctx),
                self.ctx.session_id,
                start,
            )?;
            let out = self.send(msg, &p.path)?;
            if let (Some(payload), Some(at)) = (out.payload(), out.arrival_cycle()) {
                queue.push(
                    at,
                    Event::ChallengeArrives {
                        probe: i,
                        payload: payload.to_vec(),
                    },
                );
            }
        }

        while let Some((cycle, event)) = queue.pop() {
            match event {
                Event::ChallengeArrives { probe, payload } => {
                    let p = &probes[probe];
                    let Some(ready) = self.answer_challenge(p.target, &payload, cycle)? else {
                        continue;
                    };
                    let (digest, done) = ready;
                    let back: Path = p.path.iter().rev().copied().collect();
                    let msg = Message::new(
                        p.target,
                        p.verifier,
                        MessageKind::Response,
                        digest.as_bytes().to_vec(),
                        self.ctx.session_id,
                        done,
                    )?;
                    let out = self.send(msg, &back)?;
                    if let (Some(body), Some(at)) = (out.payload(), out.arrival_cycle()) {
                        queue.push(
                            at,
                            Event::ResponseArrives {
                                probe,
                                payload: body.to_vec(),
                            },
                        );
                    }
                }
                Event::ResponseArrives { probe, payload } => {
                    if cycle <= start + timeout {
                        answers[probe] = Some((payload, cycle));
                    }
                }
            }
        }

        let mut results = Vec::with_capacity(probes.len());
        let mut end = start;
        for (p, answer) in probes.iter().zip(answers) {
            let verifier_colludes = self.chiplet(p.verifier)?.behavior == Behavior::Colluding;
            let (observed, settled) = match answer {
                Some((payload, at)) => (
                    <[u8; 32]>::try_from(payload.as_slice()).ok().map(Digest256),
                    at,
                ),
                None => (None, start + timeout),
            };
            let result = if verifier_colludes {
                ProbeResult {
                    outcome: Outcome::Match,
                    observed: Some(p.expected),
                    settled,
                }
            } else {
                let outcome = match observed {
                    None => Outcome::NoResponse,
                    Some(d) => match self.guard.check(p.verifier, p.target, &d, &p.expected) {
                        ResponseCheck::Accepted => Outcome::Match,
                        ResponseCheck::Duplicate => {
                            self.duplicates += 1;
                            Outcome::Match
                        }
                        ResponseCheck::Rejected { .. } => Outcome::Mismatch,
                    },
                };
                ProbeResult {
                    outcome,
                    observed,
                    settled,
                }
            };
            end = end.max(result.settled);
            results.push(result);
        }
        Ok((results, end))
    }

    /// Target side of a challenge: the digest and the cycle it is ready.
    fn answer_challenge(
        &mut self,
        target: ChipletId,
        payload: &[u8],
        arrival: u64,
    ) -> Result<Option<(Digest256, u64)>, ProtocolError> {
        let key = (target, payload.to_vec());
        if let Some(cached) = self.response_cache.get(&key) {
            return Ok(cached.map(|(d, ready)| (d, ready.max(arrival))));
        }
        let Some((challenge, ctx)) = parse_challenge(payload) else {
            return Ok(None);
        };
        let chiplet = self
            .sip
            .chiplets
            .get_mut(&target)
            .ok_or(ProtocolError::UnknownChiplet(target))?;
        let hash_cycles = chiplet.hash_cycles;
        let answer = chiplet.respond_to_auth(challenge, &ctx).map(|digest| {
            let busy = self.busy_until.entry(target).or_insert(0);
            let done = (*busy).max(arrival) + hash_cycles;
            *busy = done;
            self.work_cycles += hash_cycles;
            (digest, done)
        });
        self.response_cache.insert(key, answer);
        Ok(answer)
    }

    /// Pairwise challenge/response among all integrators. A pair that fails on
    /// its first route is retried once over a disjoint route; an integrator
    /// failing any peer check after that is excluded.
    pub fn cross_authenticate_integrators(&mut self) -> Result<TrustTree, ProtocolError> {
        let integrators = self.sip.integrators();
        let challenge = self.sip.manifest.challenge;

        let mut probes = Vec::new();
        for &checker in &integrators {
            for &peer in &integrators {
                if checker == peer {
                    continue;
                }
                let expected = expected_digest(&self.sip.manifest, peer, challenge, &self.ctx)?;
                probes.push(Probe {
                    verifier: checker,
                    target: peer,
                    route_index: 0,
                    path: self.route(checker, peer, 0)?,
                    expected,
                });
            }
        }
        let (first, end) = self.run_probes(&probes, self.clock)?;
        self.clock = end;

        let mut retry = Vec::new();
        for (p, r) in probes.iter().zip(&first) {
            if r.outcome == Outcome::Match {
                continue;
            }
            let routes = self.sip.topology.routes(p.verifier, p.target)?;
            if routes.len() > 1 {
                retry.push(Probe {
                    route_index: 1,
                    path: routes[1].clone(),
                    ..p.clone()
                });
            } else {
                retry.push(p.clone());
            }
        }
        let mut failed: BTreeSet<ChipletId> = BTreeSet::new();
        if !retry.is_empty() {
            let (second, end) = self.run_probes(&retry, self.clock)?;
            self.clock = end;
            for (p, r) in retry.iter().zip(second) {
                if r.outcome != Outcome::Match {
                    failed.insert(p.target);
                }
            }
        }

        let survivors: Vec<ChipletId> = integrators
            .iter()
            .copied()
            .filter(|i| !failed.contains(i))
            .collect();
        self.excluded = failed.into_iter().collect();
        if survivors.len() < 3 {
            return Err(ProtocolError::InsufficientTrustedIntegrators {
                survivors: survivors.len(),
            });
        }
        let quorum = self.config.policy_for(survivors.len())?;
        let tree = TrustTree::new(survivors, self.config.fanout, quorum);
        self.tree = Some(tree.clone());
        Ok(tree)
    }

    /// Splits each third-party chiplet's expected digest over the tree and
    /// ships one share to every member from the root.
    pub fn distribute_shares(
        &mut self,
        tree: &TrustTree,
    ) -> Result<BTreeMap<ChipletId, Vec<Share>>, ProtocolError> {
        let targets = self.sip.third_party();
        self.distribute_for(tree, &targets)?;
        Ok(self
            .holdings
            .iter()
            .map(|(member, held)| (*member, held.values().cloned().collect()))
            .collect())
    }

    fn distribute_for(
        &mut self,
        tree: &TrustTree,
        targets: &[ChipletId],
    ) -> Result<(), ProtocolError> {
        let dealer = tree.root();
        let start = self.clock;
        let timeout = self.config.timeout_cycles();
        let mut end = start;

        // Each member's shares travel together, packed into as few messages
        // as the payload bound allows.
        let mut outgoing: BTreeMap<ChipletId, Vec<u8>> = BTreeMap::new();
        for &target in targets {
            let expected = expected_digest(
                &self.sip.manifest,
                target,
                self.sip.manifest.challenge,
                &self.ctx,
            )?;
            let shares = split(expected.as_bytes(), tree.quorum, &mut self.rng)?;
            self.shares_issued += shares.len();
            for (member, share) in tree.root_set.iter().copied().zip(shares) {
                if member == dealer {
                    self.holdings
                        .entry(member)
                        .or_default()
                        .insert(target, share);
                    continue;
                }
                let buf = outgoing.entry(member).or_default();
                buf.extend_from_slice(&target.to_be_bytes());
                buf.extend_from_slice(&share.to_bytes());
            }
        }

        for (member, bundle) in outgoing {
            let routes = self.sip.topology.routes(dealer, member)?;
            let per_message = (MAX_PAYLOAD / SHARE_ENTRY_LEN) * SHARE_ENTRY_LEN;
            for chunk in bundle.chunks(per_message) {
                let mut delivered = None;
                for (attempt, path) in routes.iter().take(2).enumerate() {
                    let emit = start + attempt as u64 * timeout;
                    if attempt > 0 {
                        self.distribution_retries += 1;
                    }
                    let msg = Message::new(
                        dealer,
                        member,
                        MessageKind::Share,
                        chunk.to_vec(),
                        self.ctx.session_id,
                        emit,
                    )?;
                    let out = self.send(msg, path)?;
                    if let (Some(body), Some(at)) = (out.payload(), out.arrival_cycle()) {
                        if let Some(received) = accept_shares(body, chunk) {
                            delivered = Some(received);
                            end = end.max(at);
                            break;
                        }
                    }
                    end = end.max(emit + timeout);
                }
                let received = delivered.ok_or(ProtocolError::ShareDistributionFailed(member))?;
                self.holdings.entry(member).or_default().extend(received);
            }
        }
        self.clock = end;
        Ok(())
    }

    /// Reconstructs `target`'s expected digest from the shares the tree
    /// members actually contribute.
    fn pool(
        &self,
        tree: &TrustTree,
        target: ChipletId,
    ) -> (Result<Digest256, SharingError>, Option<AnomalyCause>) {
        let mut withheld = Vec::new();
        let mut corrupt = Vec::new();
        let mut shares = Vec::new();
        for &member in &tree.root_set {
            let behavior = self.sip.chiplets.get(&member).map(|c| &c.behavior);
            let share = self.holdings.get(&member).and_then(|h| h.get(&target));
            match (behavior, share) {
                (Some(Behavior::Withholding), _) | (_, None) => withheld.push(member),
                (_, Some(s)) if !verify_commitment(s) => corrupt.push(member),
                (_, Some(s)) => shares.push(s.clone()),
            }
        }
        let cause = if !withheld.is_empty() {
            Some(AnomalyCause::DosSuspected { withheld })
        } else if !corrupt.is_empty() {
            Some(AnomalyCause::CorruptShare { holders: corrupt })
        } else {
            None
        };
        let digest = reconstruct(&shares, tree.quorum).and_then(|bytes| {
            <[u8; 32]>::try_from(bytes.as_slice())
                .map(Digest256)
                .map_err(|_| SharingError::LengthMismatch)
        });
        (digest, cause)
    }

    /// Quorum authentication of a single third-party chiplet.
    pub fn authenticate_chiplet(
        &mut self,
        tree: &TrustTree,
        target: ChipletId,
    ) -> Result<QuorumResult, ProtocolError> {
        let mut results = self.authenticate_targets(tree, &[target])?;
        Ok(results.remove(0))
    }

    /// One parallel quorum round over `targets`: every tree member challenges
    /// every target at the same cycle.
    pub fn authenticate_targets(
        &mut self,
        tree: &TrustTree,
        targets: &[ChipletId],
    ) -> Result<Vec<QuorumResult>, ProtocolError> {
        let start = self.clock;
        let mut probes = Vec::new();
        let mut pooled = BTreeMap::new();
        for &target in targets {
            if self.chiplet(target)?.role != Role::ThirdParty {
                return Err(ProtocolError::NotThirdParty(target));
            }
            let (digest, cause) = self.pool(tree, target);
            if let Ok(expected) = digest {
                for &member in &tree.root_set {
                    probes.push(Probe {
                        verifier: member,
                        target,
                        route_index: 0,
                        path: self.route(member, target, 0)?,
                        expected,
                    });
                }
            }
            pooled.insert(target, cause);
        }

        let (results, end) = self.run_probes(&probes, start)?;
        let aggregation = aggregation_cycles(targets.len(), tree.fanout);
        self.work_cycles += aggregation;
        self.last_aggregation = aggregation;
        self.last_critical_path = (end - start) + aggregation;
        self.clock = end + aggregation;

        let mut out = Vec::with_capacity(targets.len());
        for &target in targets {
            let verdicts: Vec<IntegratorVerdict> = probes
                .iter()
                .zip(&results)
                .filter(|(p, _)| p.target == target)
                .map(|(p, r)| IntegratorVerdict {
                    integrator_id: p.verifier,
                    target_id: target,
                    outcome: r.outcome,
                    observed_digest: r.observed,
                    route_used: p.route_index,
                    route: p.path.clone(),
                    cycles_spent: r.settled - start,
                })
                .collect();
            let cause = pooled.remove(&target).flatten();
            let (verdict, cause) = match cause {
                Some(c) => (Verdict::Anomalous, Some(c)),
                None => decide(&verdicts, tree),
            };
            self.record_verdict(tree.root(), target, verdict)?;
            out.push(QuorumResult {
                target_id: target,
                verdict,
                cause,
                verdicts,
            });
        }
        Ok(out)
    }

    fn record_verdict(
        &mut self,
        root: ChipletId,
        target: ChipletId,
        verdict: Verdict,
    ) -> Result<(), ProtocolError> {
        let code = match verdict {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Anomalous => 2,
        };
        let msg = Message::new(
            root,
            target,
            MessageKind::Verdict,
            vec![code],
            self.ctx.session_id,
            self.clock,
        )?;
        self.transcript.push(msg);
        Ok(())
    }

    /// Re-authenticates an anomalous target over disjoint routes and
    /// classifies the fault.
    pub fn localize_fault(
        &mut self,
        tree: &TrustTree,
        target: ChipletId,
        first_round: &[IntegratorVerdict],
    ) -> Result<FaultDiagnosis, ProtocolError> {
        let mut evidence: Vec<Evidence> = first_round
            .iter()
            .map(|v| Evidence {
                round: 0,
                integrator_id: v.integrator_id,
                route_index: v.route_used,
                route: v.route.clone(),
                outcome: v.outcome,
            })
            .collect();

        let expected = match self.pool(tree, target).0 {
            Ok(d) => d,
            Err(_) => {
                return Ok(FaultDiagnosis {
                    target_id: target,
                    classification: Classification::ChipletFault,
                    evidence,
                    rounds: 0,
                    fallback: None,
                    flags: vec!["expected digest unavailable".into()],
                });
            }
        };

        let dissent: Vec<&IntegratorVerdict> = first_round
            .iter()
            .filter(|v| v.outcome != Outcome::Match)
            .collect();
        let suspect: BTreeSet<Link> = dissent.iter().flat_map(|v| path_links(&v.route)).collect();

        let mut fallback = None;
        let mut flags = Vec::new();
        let mut retests = Vec::new();
        let mut alternates = Vec::new();
        for v in &dissent {
            retests.push(Probe {
                verifier: v.integrator_id,
                target,
                route_index: v.route_used,
                path: v.route.clone(),
                expected,
            });
            let routes = self.sip.topology.routes(v.integrator_id, target)?;
            if let Some((idx, path)) = pick_route(&routes, v.route_used, &suspect) {
                alternates.push(Probe {
                    verifier: v.integrator_id,
                    target,
                    route_index: idx,
                    path,
                    expected,
                });
            } else if let Some(probe) = self.stand_in(&dissent, target, v, &suspect, expected)? {
                fallback = Some(RouteFallback::AlternateIntegrator);
                alternates.push(probe);
            } else {
                if !flags.iter().any(|f| f == DEGRADED_FLAG) {
                    flags.push(DEGRADED_FLAG.to_string());
                }
                alternates.push(retests.last().expect("just pushed").clone());
            }
        }
        // Controls stay clear of every link a dissenter's route used; with no
        // such route they repeat the route that already matched.
        let mut controls = Vec::new();
        for v in first_round
            .iter()
            .filter(|v| v.outcome == Outcome::Match)
            .take(2)
        {
            let routes = self.sip.topology.routes(v.integrator_id, target)?;
            let (idx, path) = pick_route(&routes, v.route_used, &suspect)
                .filter(|(_, p)| avoids(p, &suspect))
                .unwrap_or((v.route_used, v.route.clone()));
            controls.push(Probe {
                verifier: v.integrator_id,
                target,
                route_index: idx,
                path,
                expected,
            });
        }

        let n_retest = retests.len();
        let n_alt = alternates.len();
        let mut probes = retests;
        probes.extend(alternates);
        probes.extend(controls);

        for round in 1..=self.config.max_rounds {
            let (results, end) = self.run_probes(&probes, self.clock)?;
            self.clock = end + 1;
            self.work_cycles += 1;
            let round_evidence: Vec<Evidence> = probes
                .iter()
                .zip(&results)
                .map(|(p, r)| Evidence {
                    round,
                    integrator_id: p.verifier,
                    route_index: p.route_index,
                    route: p.path.clone(),
                    outcome: r.outcome,
                })
                .collect();
            evidence.extend(round_evidence.iter().cloned());
            let step = classify(
                &evidence,
                &RoundEvidence {
                    retests: &round_evidence[..n_retest],
                    alternates: &round_evidence[n_retest..n_retest + n_alt],
                    controls: &round_evidence[n_retest + n_alt..],
                },
            );
            if let Step::Resolved(classification) = step {
                return Ok(FaultDiagnosis {
                    target_id: target,
                    classification,
                    evidence,
                    rounds: round,
                    fallback,
                    flags,
                });
            }
        }

        flags.push(format!(
            "unresolved after {} rounds",
            self.config.max_rounds
        ));
        Ok(FaultDiagnosis {
            target_id: target,
            classification: Classification::ChipletFault,
            evidence,
            rounds: self.config.max_rounds,
            fallback,
            flags,
        })
    }

    /// Another dissenter with a route to `target` sharing no link with the
    /// route that failed `failed`. Integrators that matched are never used:
    /// their agreement is what is in question.
    fn stand_in(
        &self,
        dissent: &[&IntegratorVerdict],
        target: ChipletId,
        failed: &IntegratorVerdict,
        suspect: &BTreeSet<Link>,
        expected: Digest256,
    ) -> Result<Option<Probe>, ProtocolError> {
        let bad: BTreeSet<Link> = path_links(&failed.route).into_iter().collect();
        let mut best: Option<(bool, Probe)> = None;
        for v in dissent
            .iter()
            .filter(|v| v.integrator_id != failed.integrator_id)
        {
            let routes = self.sip.topology.routes(v.integrator_id, target)?;
            for (idx, path) in routes.iter().enumerate().filter(|(_, p)| avoids(p, &bad)) {
                let clean = avoids(path, suspect);
                if best.as_ref().is_none_or(|(c, _)| clean && !c) {
                    best = Some((
                        clean,
                        Probe {
                            verifier: v.integrator_id,
                            target,
                            route_index: idx,
                            path: path.clone(),
                            expected,
                        },
                    ));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }

    fn resolve(
        &mut self,
        tree: &TrustTree,
        result: &QuorumResult,
    ) -> Result<ChipletReport, ProtocolError> {
        let mut report = ChipletReport {
            id: result.target_id,
            role: Role::ThirdParty,
            verdict: result.verdict,
            first_round: Some(result.verdict),
            cause: result.cause.clone(),
            diagnosis: None,
        };
        match (&result.verdict, &result.cause) {
            (Verdict::Pass, _) => {}
            (Verdict::Fail, _) => {
                report.diagnosis = Some(FaultDiagnosis {
                    target_id: result.target_id,
                    classification: Classification::ChipletFault,
                    evidence: result
                        .verdicts
                        .iter()
                        .map(|v| Evidence {
                            round: 0,
                            integrator_id: v.integrator_id,
                            route_index: v.route_used,
                            route: v.route.clone(),
                            outcome: v.outcome,
                        })
                        .collect(),
                    rounds: 0,
                    fallback: None,
                    flags: Vec::new(),
                });
            }
            (Verdict::Anomalous, Some(AnomalyCause::Inconsistent)) => {
                let diagnosis = self.localize_fault(tree, result.target_id, &result.verdicts)?;
                report.verdict = match diagnosis.classification {
                    Classification::ChipletFault => Verdict::Fail,
                    _ => Verdict::Pass,
                };
                report.diagnosis = Some(diagnosis);
            }
            // Withheld or corrupt shares implicate integrators, not the target.
            (Verdict::Anomalous, _) => {}
        }
        Ok(report)
    }

    /// Full session: cross-authentication, share distribution, quorum round,
    /// escalation and diagnosis.
    pub fn run(&mut self) -> Result<AuthReport, ProtocolError> {
        let mut phases = Phases::default();

        phases.cross_auth.start = self.clock;
        let tree = self.cross_authenticate_integrators()?;
        phases.cross_auth.end = self.clock;

        phases.distribution.start = self.clock;
        self.distribute_shares(&tree)?;
        phases.distribution.end = self.clock;

        phases.authentication.start = self.clock;
        let targets = self.sip.third_party();
        let results = self.authenticate_targets(&tree, &targets)?;
        phases.authentication.end = self.clock;
        let critical_path = self.last_critical_path;
        let aggregation = self.last_aggregation;

        let loc_start = self.clock;
        let mut chiplets = Vec::new();
        for result in &results {
            chiplets.push(self.resolve(&tree, result)?);
        }
        if self.clock > loc_start {
            phases.localization = Some(Span {
                start: loc_start,
                end: self.clock,
            });
        }

        for id in self.sip.integrators() {
            chiplets.push(ChipletReport {
                id,
                role: Role::Integrator,
                verdict: if tree.contains(id) {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                },
                first_round: None,
                cause: None,
                diagnosis: None,
            });
        }
        chiplets.sort_by_key(|c| c.id);

        Ok(AuthReport {
            schema: REPORT_SCHEMA,
            session_id: self.ctx.session_id,
            nonce: self.ctx.nonce,
            quorum: tree.quorum,
            trusted_integrators: tree.root_set.clone(),
            excluded_integrators: self.excluded.clone(),
            chiplets,
            first_round: results.into_iter().flat_map(|r| r.verdicts).collect(),
            shares_issued: self.shares_issued,
            distribution_retries: self.distribution_retries,
            duplicate_responses: self.duplicates,
            phases,
            aggregation_cycles: aggregation,
            total_cycles: self.work_cycles,
            critical_path_cycles: critical_path,
            session_cycles: self.clock,
            clock_ghz: self.config.clock_ghz,
            transcripts: self.transcript.clone(),
        })
    }

    /// Plugs a new third-party chiplet in after the session has run. Only the
    /// new target gets shares; existing holdings are untouched.
    pub fn add_third_party(
        &mut self,
        chiplet: Chiplet,
        enrolled: Signature,
        links: &[Link],
    ) -> Result<ChipletReport, ProtocolError> {
        if chiplet.role != Role::ThirdParty {
            return Err(ProtocolError::NotThirdParty(chiplet.id));
        }
        let tree = self
            .tree
            .clone()
            .ok_or(ProtocolError::UnknownChiplet(chiplet.id))?;
        let id = self.insert(chiplet, enrolled, links)?;
        self.distribute_for(&tree, &[id])?;
        let result = self.authenticate_chiplet(&tree, id)?;
        self.resolve(&tree, &result)
    }

    /// Plugs a new integrator in: the tree is rebuilt by cross-authentication
    /// and every target is re-shared over the new tree.
    pub fn add_integrator(
        &mut self,
        chiplet: Chiplet,
        enrolled: Signature,
        links: &[Link],
    ) -> Result<TrustTree, ProtocolError> {
        if chiplet.role != Role::Integrator {
            return Err(ProtocolError::UnknownChiplet(chiplet.id));
        }
        self.insert(chiplet, enrolled, links)?;
        let tree = self.cross_authenticate_integrators()?;
        self.holdings.clear();
        self.distribute_shares(&tree)?;
        Ok(tree)
    }

    fn insert(
        &mut self,
        chiplet: Chiplet,
        enrolled: Signature,
        links: &[Link],
    ) -> Result<ChipletId, ProtocolError> {
        let id = chiplet.id;
        if self.sip.chiplets.contains_key(&id) {
            return Err(ProtocolError::DuplicateChiplet(id));
        }
        self.sip.topology.add_node(id, links)?;
        self.sip.manifest.entries.insert(id, enrolled);
        self.sip.chiplets.insert(id, chiplet);
        Ok(id)
    }
}

fn avoids(path: &[ChipletId], links: &BTreeSet<Link>) -> bool {
    path_links(path).iter().all(|l| !links.contains(l))
}

/// Some route other than `used`, preferring one clear of `suspect`.
fn pick_route(routes: &[Path], used: usize, suspect: &BTreeSet<Link>) -> Option<(usize, Path)> {
    let mut others = routes.iter().enumerate().filter(|(i, _)| *i != used);
    let first = others.clone().next();
    others
        .find(|(_, p)| avoids(p, suspect))
        .or(first)
        .map(|(i, p)| (i, p.clone()))
}

/// Parses a share bundle. The commitment does not cover the target id, so the
/// ids must match the ones that were sent, in order.
fn accept_shares(body: &[u8], sent: &[u8]) -> Option<Vec<(ChipletId, Share)>> {
    if body.len() != sent.len() || !body.len().is_multiple_of(SHARE_ENTRY_LEN) {
        return None;
    }
    body.chunks(SHARE_ENTRY_LEN)
        .zip(sent.chunks(SHARE_ENTRY_LEN))
        .map(|(entry, original)| {
            if entry[..8] != original[..8] {
                return None;
            }
            let target = u64::from_be_bytes(entry[..8].try_into().ok()?);
            let share = Share::from_bytes(&entry[8..]).ok()?;
            verify_commitment(&share).then_some((target, share))
        })
        .collect()
}

/// Pass needs a quorum of matches and no dissent. Fail needs a quorum of
/// mismatches that agree on the observed digest and arrived over at least two
/// link-disjoint routes, so one bad link cannot forge agreement.
fn decide(verdicts: &[IntegratorVerdict], tree: &TrustTree) -> (Verdict, Option<AnomalyCause>) {
    let t = tree.quorum.t;
    let matches = verdicts
        .iter()
        .filter(|v| v.outcome == Outcome::Match)
        .count();
    if matches >= t && matches == verdicts.len() {
        return (Verdict::Pass, None);
    }
    let mut agreeing: BTreeMap<Digest256, Vec<&Path>> = BTreeMap::new();
    for v in verdicts.iter().filter(|v| v.outcome == Outcome::Mismatch) {
        if let Some(d) = v.observed_digest {
            agreeing.entry(d).or_default().push(&v.route);
        }
    }
    if agreeing
        .values()
        .any(|routes| routes.len() >= t && independent_routes(routes) >= 2)
    {
        return (Verdict::Fail, None);
    }
    (Verdict::Anomalous, Some(AnomalyCause::Inconsistent))
}
