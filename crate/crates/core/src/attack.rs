//! Attack harness: bit flips, share removal, replay, cloning and silence,
//! each measured as the Hamming distance between the digest a verifier sees
//! and the one it expects, plus the protocol verdict.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chiplet::{expected_digest, genuine_secret, Behavior, ChipletId, Role};
use crate::config::{assemble, AttackKind, AttackSpec};
use crate::crypto::{derive_seed, det_rng, hamming_distance, Digest256, SessionSource};
use crate::net::{Layout, MessageKind};
use crate::protocol::{
    authenticate_sip, Engine, ProtocolConfig, ProtocolError, ReplayGuard, Sip, Verdict,
};
use crate::sharing::aggregate_digest;

/// The victim in every attack SiP.
pub const TARGET: ChipletId = 100;
const INTEGRATORS: [ChipletId; 4] = [1, 2, 3, 4];

pub const PERFECT_CLONE_FLAG: &str =
    "model limit: a clone with the genuine PUF secret is indistinguishable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub seed: u64,
    /// None when no digest was observed (silence).
    pub hd: Option<u32>,
    pub verdict: Verdict,
    /// Replays accepted by the fresh session.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub accepted: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingReport {
    pub attack: AttackKind,
    pub length_bits: usize,
    pub trials: Vec<Trial>,
    pub mean: Option<f64>,
    /// Sample standard deviation; zero for a single trial.
    pub std: Option<f64>,
    pub min: Option<u32>,
    pub max: Option<u32>,
    /// Fraction of trials that did not end in Pass.
    pub fail_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl HammingReport {
    fn from_trials(attack: AttackKind, length_bits: usize, trials: Vec<Trial>) -> Self {
        let hds: Vec<f64> = trials.iter().filter_map(|t| t.hd).map(f64::from).collect();
        let (mean, std) = if hds.is_empty() {
            (None, None)
        } else {
            let n = hds.len() as f64;
            let mean = hds.iter().sum::<f64>() / n;
            let std = if hds.len() > 1 {
                (hds.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (Some(mean), Some(std))
        };
        let fails = trials.iter().filter(|t| t.verdict != Verdict::Pass).count();
        HammingReport {
            attack,
            length_bits,
            mean,
            std,
            min: trials.iter().filter_map(|t| t.hd).min(),
            max: trials.iter().filter_map(|t| t.hd).max(),
            fail_rate: if trials.is_empty() {
                0.0
            } else {
                fails as f64 / trials.len() as f64
            },
            trials,
            flags: Vec::new(),
        }
    }

    pub fn pass_count(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.verdict == Verdict::Pass)
            .count()
    }

    pub fn accepted_replays(&self) -> u32 {
        self.trials.iter().map(|t| t.accepted).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalMode {
    /// Pooling refuses to proceed with a tree member's share missing.
    Strict,
    /// The missing share is zero-filled and the aggregate is used anyway.
    Degraded,
}

/// What to run and how often.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub length_bits: usize,
    pub trials: usize,
    pub flips: usize,
    pub seed: u64,
}

impl AttackScenario {
    pub fn run(&self) -> Result<HammingReport, ProtocolError> {
        match self.kind {
            AttackKind::BitFlip => {
                attack_bit_flip(self.length_bits, self.flips, self.trials, self.seed)
            }
            AttackKind::ShareRemoval => {
                attack_share_removal(self.length_bits, self.trials, self.seed)
            }
            AttackKind::Replay => attack_replay(self.length_bits, self.trials, self.seed),
            AttackKind::Clone => attack_clone(self.length_bits, self.trials, self.seed),
            AttackKind::Silent => attack_silent(self.length_bits, self.trials, self.seed),
        }
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        trial_seed(self.seed, self.kind, self.length_bits, trial)
    }
}

pub fn trial_seed(seed: u64, kind: AttackKind, length_bits: usize, trial: usize) -> u64 {
    derive_seed(
        seed,
        &format!("attack/{}/{length_bits}", kind.name()),
        trial as u64,
    )
}

fn protocol_for(length_bits: usize) -> ProtocolConfig {
    ProtocolConfig {
        signature_length_bits: length_bits,
        ..ProtocolConfig::default()
    }
}

/// Four integrators in a star around the single victim.
fn victim_sip(length_bits: usize, seed: u64, behavior: Behavior) -> Sip {
    let nodes: Vec<_> = INTEGRATORS
        .iter()
        .map(|&id| (id, Role::Integrator, Behavior::Genuine, None))
        .chain([(TARGET, Role::ThirdParty, behavior, None)])
        .collect();
    assemble(
        &nodes,
        Layout::Star.links(&INTEGRATORS, &[TARGET]),
        &protocol_for(length_bits),
        seed,
    )
    .expect("attack topology is well formed")
}

fn run_trials<F>(
    kind: AttackKind,
    length_bits: usize,
    trials: usize,
    seed: u64,
    f: F,
) -> Result<HammingReport, ProtocolError>
where
    F: Fn(usize, u64) -> Result<Trial, ProtocolError> + Sync,
{
    let results: Result<Vec<Trial>, ProtocolError> = (0..trials)
        .into_par_iter()
        .map(|i| f(i, trial_seed(seed, kind, length_bits, i)))
        .collect();
    Ok(HammingReport::from_trials(kind, length_bits, results?))
}

/// Digest seen by the first trusted integrator versus the one it expected.
fn observed_distance(
    sip: &Sip,
    report: &crate::protocol::AuthReport,
) -> Result<Option<u32>, ProtocolError> {
    let ctx = crate::crypto::SessionContext {
        session_id: report.session_id,
        nonce: report.nonce,
    };
    let expected = expected_digest(&sip.manifest, TARGET, sip.manifest.challenge, &ctx)?;
    Ok(report
        .first_round
        .iter()
        .find(|v| v.target_id == TARGET)
        .and_then(|v| v.observed_digest)
        .map(|d| hamming_distance(&d, &expected)))
}

fn verdict_of(report: &crate::protocol::AuthReport) -> Verdict {
    report
        .chiplet(TARGET)
        .map_or(Verdict::Anomalous, |c| c.verdict)
}

/// The victim flips `flips` distinct random signature bits before hashing.
pub fn attack_bit_flip(
    length_bits: usize,
    flips: usize,
    trials: usize,
    seed: u64,
) -> Result<HammingReport, ProtocolError> {
    assert!(
        flips >= 1 && flips <= length_bits,
        "flips must lie in [1, length]"
    );
    run_trials(
        AttackKind::BitFlip,
        length_bits,
        trials,
        seed,
        |trial, tseed| {
            let mut rng = det_rng(tseed);
            let mut positions = sample(&mut rng, length_bits, flips).into_vec();
            positions.sort_unstable();
            let sip = victim_sip(length_bits, tseed, Behavior::Tampered { positions });
            let report = authenticate_sip(&sip, &protocol_for(length_bits), tseed)?;
            Ok(Trial {
                trial,
                seed: tseed,
                hd: observed_distance(&sip, &report)?,
                verdict: verdict_of(&report),
                accepted: 0,
            })
        },
    )
}

/// One tree member withholds its share of the victim's digest. The verdict
/// comes from strict pooling; the distance is that of the degraded aggregate
/// (missing share zero-filled) from the intact one.
pub fn attack_share_removal(
    length_bits: usize,
    trials: usize,
    seed: u64,
) -> Result<HammingReport, ProtocolError> {
    run_trials(
        AttackKind::ShareRemoval,
        length_bits,
        trials,
        seed,
        |trial, tseed| {
            let (hd, verdict) = share_removal_trial(length_bits, tseed)?;
            Ok(Trial {
                trial,
                seed: tseed,
                hd: Some(hd),
                verdict,
                accepted: 0,
            })
        },
    )
}

fn share_removal_trial(length_bits: usize, seed: u64) -> Result<(u32, Verdict), ProtocolError> {
    let sip = victim_sip(length_bits, seed, Behavior::Genuine);
    let mut engine = Engine::new(sip, protocol_for(length_bits), seed);
    let tree = engine.cross_authenticate_integrators()?;
    engine.distribute_shares(&tree)?;

    let mut rng = det_rng(derive_seed(seed, "victim", 0));
    let victim_pos = sample(&mut rng, tree.root_set.len(), 1).index(0);
    let victim = tree.root_set[victim_pos];
    let shares: Vec<_> = tree
        .root_set
        .iter()
        .filter_map(|m| {
            engine
                .holdings()
                .get(m)
                .and_then(|h| h.get(&TARGET))
                .cloned()
        })
        .collect();
    let n = tree.root_set.len();
    let intact = aggregate_digest(&shares, n, &[]);
    let withheld_index = shares
        .iter()
        .zip(&tree.root_set)
        .find(|(_, m)| **m == victim)
        .map(|(s, _)| s.index)
        .expect("every member holds a share");
    let degraded = aggregate_digest(&shares, n, &[withheld_index]);

    engine
        .chiplet_mut(victim)
        .expect("victim is a tree member")
        .behavior = Behavior::Withholding;
    let result = engine.authenticate_chiplet(&tree, TARGET)?;
    Ok((hamming_distance(&intact, &degraded), result.verdict))
}

/// Share removal under an explicit pooling mode.
pub fn share_removal_mode(
    length_bits: usize,
    trials: usize,
    seed: u64,
    mode: RemovalMode,
) -> Result<HammingReport, ProtocolError> {
    let mut report = attack_share_removal(length_bits, trials, seed)?;
    if mode == RemovalMode::Degraded {
        // Degraded pooling uses the aggregate whatever it holds, so every
        // trial compares a wrong aggregate and fails.
        for t in &mut report.trials {
            t.verdict = if t.hd == Some(0) {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
        }
        report = HammingReport::from_trials(report.attack, length_bits, report.trials);
    }
    Ok(report)
}

/// Responses recorded in one session are replayed into a fresh session of
/// the same SiP.
pub fn attack_replay(
    length_bits: usize,
    trials: usize,
    seed: u64,
) -> Result<HammingReport, ProtocolError> {
    run_trials(
        AttackKind::Replay,
        length_bits,
        trials,
        seed,
        |trial, tseed| {
            let sip = victim_sip(length_bits, tseed, Behavior::Genuine);
            let mut sessions = SessionSource::new(tseed);
            let recorded_ctx = sessions.next_session();
            let fresh_ctx = sessions.next_session();

            let mut recorder =
                Engine::with_session(sip.clone(), protocol_for(length_bits), tseed, recorded_ctx);
            recorder.run()?;
            let recorded: Vec<_> = recorder
                .transcript()
                .iter()
                .filter(|m| m.kind == MessageKind::Response && m.src == TARGET)
                .cloned()
                .collect();

            let expected =
                expected_digest(&sip.manifest, TARGET, sip.manifest.challenge, &fresh_ctx)?;
            let mut guard = ReplayGuard::new(fresh_ctx);
            let mut accepted = 0;
            let mut hd = None;
            for msg in &recorded {
                let digest = Digest256(
                    msg.payload
                        .as_slice()
                        .try_into()
                        .expect("responses are 32 octets"),
                );
                if guard.check(msg.dst, TARGET, &digest, &expected).accepted() {
                    accepted += 1;
                }
                hd.get_or_insert(hamming_distance(&digest, &expected));
            }
            Ok(Trial {
                trial,
                seed: tseed,
                hd,
                verdict: if accepted > 0 {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                },
                accepted,
            })
        },
    )
}

/// A physical clone: same id and role, its own PUF. A clone carrying the
/// genuine secret would pass; the report flags that as a model limit.
pub fn attack_clone(
    length_bits: usize,
    trials: usize,
    seed: u64,
) -> Result<HammingReport, ProtocolError> {
    let mut report = run_trials(
        AttackKind::Clone,
        length_bits,
        trials,
        seed,
        |trial, tseed| {
            let sip = victim_sip(length_bits, tseed, Behavior::Counterfeit);
            let report = authenticate_sip(&sip, &protocol_for(length_bits), tseed)?;
            Ok(Trial {
                trial,
                seed: tseed,
                hd: observed_distance(&sip, &report)?,
                verdict: verdict_of(&report),
                accepted: 0,
            })
        },
    )?;
    if perfect_clone_passes(length_bits, seed)? {
        report.flags.push(PERFECT_CLONE_FLAG.to_string());
    }
    Ok(report)
}

/// Whether a clone holding the genuine secret authenticates.
pub fn perfect_clone_passes(length_bits: usize, seed: u64) -> Result<bool, ProtocolError> {
    let mut sip = victim_sip(length_bits, seed, Behavior::Genuine);
    let genuine = sip.chiplets[&TARGET].clone();
    let clone = genuine.counterfeit(genuine_secret(seed, TARGET));
    debug_assert!(clone.secret_matches(&genuine));
    sip.chiplets.insert(TARGET, clone);
    let report = authenticate_sip(&sip, &protocol_for(length_bits), seed)?;
    Ok(verdict_of(&report) == Verdict::Pass)
}

/// The victim never answers.
pub fn attack_silent(
    length_bits: usize,
    trials: usize,
    seed: u64,
) -> Result<HammingReport, ProtocolError> {
    run_trials(
        AttackKind::Silent,
        length_bits,
        trials,
        seed,
        |trial, tseed| {
            let sip = victim_sip(length_bits, tseed, Behavior::Silent);
            let report = authenticate_sip(&sip, &protocol_for(length_bits), tseed)?;
            Ok(Trial {
                trial,
                seed: tseed,
                hd: None,
                verdict: verdict_of(&report),
                accepted: 0,
            })
        },
    )
}

/// Runs every kind at every length in `spec`, in that order, on a pool of
/// `jobs` threads (0 = all cores). Output does not depend on `jobs`.
pub fn run_sweep(
    spec: &AttackSpec,
    seed: u64,
    jobs: usize,
) -> Result<Vec<HammingReport>, ProtocolError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| {
        let mut out = Vec::new();
        for &kind in &spec.kinds {
            for &length_bits in &spec.lengths {
                let scenario = AttackScenario {
                    kind,
                    length_bits,
                    trials: spec.trials,
                    flips: spec.flips,
                    seed,
                };
                let mut report = scenario.run()?;
                if kind == AttackKind::ShareRemoval && spec.degraded {
                    report
                        .flags
                        .push("distance: degraded aggregate; verdict: strict pooling".into());
                }
                debug_assert_eq!(
                    report.trials.first().map(|t| t.seed),
                    (spec.trials > 0).then(|| scenario.trial_seed(0))
                );
                out.push(report);
            }
        }
        Ok(out)
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "attack",
    "length_bits",
    "mean_hd",
    "std_hd",
    "min",
    "max",
    "fail_rate",
];

/// Summary table, one row per report, LF line endings.
pub fn sweep_csv(reports: &[HammingReport]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in reports {
        w.write_record([
            r.attack.name().to_string(),
            r.length_bits.to_string(),
            opt(r.mean),
            opt(r.std),
            r.min.map(|v| v.to_string()).unwrap_or_default(),
            r.max.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.4}", r.fail_rate),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

#[derive(Serialize)]
struct RawRecord<'a> {
    attack: &'a str,
    length_bits: usize,
    #[serde(flatten)]
    trial: &'a Trial,
}

/// Every trial as one JSON object per line.
pub fn sweep_jsonl(reports: &[HammingReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for t in &r.trials {
            let rec = RawRecord {
                attack: r.attack.name(),
                length_bits: r.length_bits,
                trial: t,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
