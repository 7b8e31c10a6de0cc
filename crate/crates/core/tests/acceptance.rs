//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use authentree::attack::{attack_bit_flip, attack_replay, attack_share_removal};
use authentree::chiplet::{Behavior, ChipletId, Role};
use authentree::config::assemble;
use authentree::crypto::sha256;
use authentree::net::{Layout, Link, LinkState, ScheduledFault};
use authentree::protocol::{authenticate_sip, Classification, ProtocolConfig, Sip, Verdict};
use authentree::sharing::{default_threshold, reconstruct, split, SharingError, SharingPolicy};

const LENGTHS: [usize; 4] = [64, 128, 256, 512];
const HD_BAND: (f64, f64) = (120.0, 136.0);
const SEED: u64 = 2024;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn in_band(mean: f64) -> bool {
    (HD_BAND.0..=HD_BAND.1).contains(&mean)
}

/// Mean Hamming distance of `trials` pairs of independent uniform 256-bit
/// strings: the reference a good hash should be indistinguishable from.
fn binomial_oracle(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = 0u64;
    for _ in 0..trials {
        let a: [u8; 32] = rng.gen();
        let b: [u8; 32] = rng.gen();
        total += a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x ^ y).count_ones() as u64)
            .sum::<u64>();
    }
    total as f64 / trials as f64
}

fn hash_conformance() -> Outcome {
    let text = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sha256_vectors.txt"),
    )
    .expect("vector file");
    let mut checked = 0;
    let mut saw_empty = false;
    let mut saw_abc = false;
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        let (msg, want) = line.split_once(' ').expect("two fields");
        let msg = if msg == "-" {
            Vec::new()
        } else {
            hex::decode(msg).expect("hex")
        };
        saw_empty |= msg.is_empty();
        saw_abc |= msg == b"abc";
        if sha256(&msg).to_hex() != want {
            return outcome(false, format!("mismatch on {line}"));
        }
        checked += 1;
    }
    outcome(
        checked >= 10 && saw_empty && saw_abc,
        format!("{checked} vectors bit-exact (empty and \"abc\" included)"),
    )
}

fn avalanche() -> Outcome {
    let oracle = binomial_oracle(1000, SEED);
    let mut parts = Vec::new();
    let mut ok = in_band(oracle);
    for len in LENGTHS {
        let r = attack_bit_flip(len, 1, 1000, SEED).expect("bit-flip sweep");
        let mean = r.mean.unwrap_or(f64::NAN);
        ok &= in_band(mean) && r.pass_count() == 0 && r.trials.len() == 1000;
        parts.push(format!("{len}b mean {mean:.2} pass {}", r.pass_count()));
    }
    outcome(ok, format!("{}; oracle {oracle:.2}", parts.join(", ")))
}

fn share_removal() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for len in LENGTHS {
        let r = attack_share_removal(len, 1000, SEED).expect("share-removal sweep");
        let mean = r.mean.unwrap_or(f64::NAN);
        ok &= in_band(mean) && r.pass_count() == 0 && r.fail_rate == 1.0;
        parts.push(format!(
            "{len}b degraded mean {mean:.2} strict non-pass {:.0}%",
            r.fail_rate * 100.0
        ));
    }
    outcome(ok, parts.join(", "))
}

fn replay() -> Outcome {
    let r = attack_replay(256, 100, SEED).expect("replay");
    let mean = r.mean.unwrap_or(f64::NAN);
    outcome(
        r.accepted_replays() == 0 && r.trials.len() == 100 && in_band(mean),
        format!(
            "100 transcripts, {} acceptances, mean distance {mean:.2}",
            r.accepted_replays()
        ),
    )
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n).map(move |mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
}

fn threshold_security() -> Outcome {
    let cfg = ProtocolConfig::default();
    let mut forged = 0;
    let mut runs = 0;
    let mut recon = 0;
    for n in 3..=5usize {
        let t = default_threshold(n);
        let integrators: Vec<ChipletId> = (1..=n as u64).collect();
        for dishonest in subsets(n).filter(|s| s.len() < t) {
            let nodes: Vec<_> = integrators
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let b = if dishonest.contains(&i) {
                        Behavior::Colluding
                    } else {
                        Behavior::Genuine
                    };
                    (id, Role::Integrator, b, None)
                })
                .chain([(100, Role::ThirdParty, Behavior::Counterfeit, None)])
                .collect();
            let sip =
                assemble(&nodes, Layout::Star.links(&integrators, &[100]), &cfg, SEED).unwrap();
            let report = authenticate_sip(&sip, &cfg, SEED).unwrap();
            runs += 1;
            if report.chiplet(100).unwrap().verdict == Verdict::Pass {
                forged += 1;
            }
        }

        let policy = SharingPolicy::new(t, n).unwrap();
        let secret = sha256(format!("threshold/{n}").as_bytes());
        let shares = split(
            secret.as_bytes(),
            policy,
            &mut ChaCha20Rng::seed_from_u64(n as u64),
        )
        .unwrap();
        for subset in subsets(n).filter(|s| !s.is_empty()) {
            let picked: Vec<_> = subset.iter().map(|&i| shares[i].clone()).collect();
            let result = reconstruct(&picked, policy);
            let expect_ok = subset.len() >= t;
            match (expect_ok, result) {
                (true, Ok(bytes)) if bytes == secret.as_bytes() => recon += 1,
                (false, Err(SharingError::InsufficientShares { .. })) => recon += 1,
                _ => {
                    return outcome(
                        false,
                        format!("n={n} subset {subset:?}: wrong reconstruction outcome"),
                    )
                }
            }
        }
    }
    outcome(
        forged == 0 && recon == 7 + 15 + 31,
        format!("{runs} sub-threshold collusion runs, {forged} forged passes; {recon}/53 share subsets behave"),
    )
}

fn sip_for(layout: Layout, target_behavior: Behavior) -> Sip {
    let cfg = ProtocolConfig::default();
    let integ: Vec<ChipletId> = vec![1, 2, 3, 4];
    let third: Vec<ChipletId> = vec![100, 101, 102, 103];
    let nodes: Vec<_> = integ
        .iter()
        .map(|&id| (id, Role::Integrator, Behavior::Genuine, None))
        .chain(third.iter().map(|&id| {
            let b = if id == 100 {
                target_behavior.clone()
            } else {
                Behavior::Genuine
            };
            (id, Role::ThirdParty, b, None)
        }))
        .collect();
    assemble(&nodes, layout.links(&integ, &third), &cfg, SEED).unwrap()
}

/// The link touching the target on integrator 1's primary route to it.
fn target_link(sip: &Sip) -> Link {
    let route = sip.topology.routes(1, 100).unwrap()[0].clone();
    Link::new(route[route.len() - 2], 100)
}

fn localization_case(layout: Layout, case: &str) -> Result<String, String> {
    let cfg = ProtocolConfig::default();
    let mut sip = sip_for(
        layout,
        if case == "counterfeit" {
            Behavior::Counterfeit
        } else {
            Behavior::Genuine
        },
    );
    let link = target_link(&sip);
    match case {
        "counterfeit" => {}
        "corrupting" => {
            sip.topology
                .inject_link_fault(link, LinkState::Corrupting(vec![0]))
                .unwrap();
        }
        "dropping" => {
            sip.topology
                .inject_link_fault(link, LinkState::Dropping)
                .unwrap();
        }
        "transient" => {
            let auth = authenticate_sip(&sip, &cfg, SEED)
                .unwrap()
                .phases
                .authentication;
            sip.topology
                .add_scheduled_fault(ScheduledFault {
                    link,
                    state: LinkState::Dropping,
                    from_cycle: auth.start,
                    to_cycle: Some(auth.end),
                })
                .unwrap();
        }
        _ => unreachable!(),
    }
    let report = authenticate_sip(&sip, &cfg, SEED).map_err(|e| e.to_string())?;
    let diagnoses: Vec<_> = report.diagnoses().collect();
    if diagnoses.is_empty() {
        return Err(format!("{case}/{layout:?}: no diagnosis"));
    }
    let rejected = report.rejected();
    let ok = match case {
        "counterfeit" => {
            rejected == vec![100]
                && diagnoses.len() == 1
                && diagnoses[0].target_id == 100
                && diagnoses[0].classification == Classification::ChipletFault
        }
        "corrupting" | "dropping" => {
            rejected.is_empty()
                && diagnoses.iter().all(|d| match &d.classification {
                    Classification::LinkFault(links) => links.contains(&link),
                    _ => false,
                })
        }
        "transient" => {
            rejected.is_empty()
                && diagnoses
                    .iter()
                    .all(|d| d.classification == Classification::Transient)
        }
        _ => false,
    };
    let summary: BTreeSet<String> = diagnoses
        .iter()
        .map(|d| match &d.classification {
            Classification::LinkFault(l) => format!(
                "link{:?}",
                l.iter().map(ToString::to_string).collect::<Vec<_>>()
            ),
            other => format!("{other:?}").to_lowercase(),
        })
        .collect();
    let text = format!(
        "{case}/{layout:?}->{}",
        summary.into_iter().collect::<Vec<_>>().join("+")
    );
    if ok {
        Ok(text)
    } else {
        Err(format!("{text} (rejected {rejected:?}, injected {link})"))
    }
}

fn localization() -> Outcome {
    let mut good = 0;
    let mut failures = Vec::new();
    for layout in [Layout::Star, Layout::Mesh, Layout::Clique] {
        for case in ["counterfeit", "corrupting", "dropping", "transient"] {
            match localization_case(layout, case) {
                Ok(_) => good += 1,
                Err(e) => failures.push(e),
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{good}/12 cases match ground truth, no chiplet rejected on link faults")
    } else {
        format!("{good}/12 cases; failures: {}", failures.join("; "))
    };
    outcome(failures.is_empty(), detail)
}

fn star(third_party: usize) -> Sip {
    let cfg = ProtocolConfig::default();
    let integ: Vec<ChipletId> = vec![1, 2, 3, 4];
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
    assemble(&nodes, Layout::Star.links(&integ, &third), &cfg, SEED).unwrap()
}

fn latency() -> Outcome {
    let cfg = ProtocolConfig::default();
    // Challenge over one link, one hash, response over one link, one comparator cycle.
    let hand_traced = cfg.link_latency + cfg.hash_cycles + cfg.link_latency + 1;
    let single = authenticate_sip(&star(1), &cfg, SEED).unwrap();
    let many = authenticate_sip(&star(64), &cfg, SEED).unwrap();
    let ns = many.critical_path_cycles as f64 / cfg.clock_ghz;
    outcome(
        single.critical_path_cycles == hand_traced && many.critical_path_cycles < 1000 && many.all_authenticated(),
        format!(
            "single target {} cycles (hand-traced {hand_traced}), 64 targets {} cycles = {ns:.0} ns",
            single.critical_path_cycles, many.critical_path_cycles
        ),
    )
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_authentree"))
        .env_remove("AUTHENTREE_SEED")
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn determinism() -> Outcome {
    // Both runs write to the same paths so messages that echo a path match too.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let counterfeit = s(&scenario("counterfeit"));
    let auth_dir = s(&d.join("auth"));
    let transcript = s(&d.join("auth/transcript.jsonl"));
    let raw = s(&d.join("raw.jsonl"));
    let csv = s(&d.join("sweep.csv"));
    let commands: Vec<Vec<&str>> = vec![
        vec!["validate", &counterfeit],
        vec![
            "authenticate",
            &counterfeit,
            "--out",
            &auth_dir,
            "--seed",
            "7",
        ],
        vec![
            "attack",
            &counterfeit,
            "--sweep",
            "--trials",
            "20",
            "--raw",
            &raw,
            "--out",
            &csv,
        ],
        vec!["replay", &transcript],
        vec!["replay", &transcript, "--as-attack"],
    ];
    let files = [
        "auth/report.json",
        "auth/transcript.jsonl",
        "auth/manifest.json",
        "raw.jsonl",
        "sweep.csv",
    ];

    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        let mut run = Vec::new();
        for args in &commands {
            let (code, stdout) = cli(args);
            if code != 0 {
                return outcome(false, format!("{args:?} exited {code}"));
            }
            run.push(stdout);
        }
        for f in files {
            run.push(fs::read(d.join(f)).unwrap());
        }
        outputs.push(run);
    }
    let differing: Vec<usize> = (0..outputs[0].len())
        .filter(|&i| outputs[0][i] != outputs[1][i])
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "{} outputs from {} commands compared across two runs, {} differ",
            outputs[0].len(),
            commands.len(),
            differing.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("hash conformance", hash_conformance, Duration::from_secs(1)),
        (
            "avalanche / fault injection",
            avalanche,
            Duration::from_secs(10),
        ),
        (
            "share removal / DoS",
            share_removal,
            Duration::from_secs(10),
        ),
        ("replay rejection", replay, Duration::from_secs(5)),
        (
            "threshold security",
            threshold_security,
            Duration::from_secs(30),
        ),
        ("fault localization", localization, Duration::from_secs(10)),
        ("latency model", latency, Duration::from_secs(5)),
        ("determinism", determinism, Duration::from_secs(30)),
    ];
    // Written straight to the stderr handle so the lines show up under the
    // default test runner without --nocapture.
    let mut err = std::io::stderr();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let ok = result.ok && elapsed <= *budget;
        failed += usize::from(!ok);
        let timing = if elapsed <= *budget {
            format!("{:.2}s", elapsed.as_secs_f64())
        } else {
            format!(
                "{:.2}s, over the {}s budget",
                elapsed.as_secs_f64(),
                budget.as_secs()
            )
        };
        let _ = writeln!(
            err,
            "acceptance {} {name}: {} ({}) [{timing}]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    let _ = writeln!(
        err,
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
