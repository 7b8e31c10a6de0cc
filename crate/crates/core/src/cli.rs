//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 protocol error, 4 I/O error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attack::{run_sweep, sweep_csv, sweep_jsonl};
use crate::config::{AttackSpec, ConfigError, ScenarioConfig};
use crate::crypto::{hamming_distance, Digest256, SessionSource};
use crate::net::MessageKind;
use crate::protocol::{
    latency_model, AuthReport, Classification, Engine, ProtocolError, ReplayGuard, Verdict,
};
use crate::transcript::{Transcript, TranscriptError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "authentree",
    version,
    about = "Quorum-based chiplet authentication simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and report what it describes.
    Validate { scenario: PathBuf },
    /// Run one authentication session.
    Authenticate {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long, env = "AUTHENTREE_SEED")]
        seed: Option<u64>,
        /// Directory for report.json, transcript.jsonl and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the attack harness and print the summary CSV.
    Attack {
        scenario: PathBuf,
        #[arg(long, env = "AUTHENTREE_SEED")]
        seed: Option<u64>,
        /// Every configured length instead of the protocol's signature length.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        trials: Option<usize>,
        /// Per-trial JSON Lines output.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded session and compare, or replay it into a fresh one.
    Replay {
        transcript: PathBuf,
        /// Feed the recorded responses to a new session as an attacker would.
        #[arg(long)]
        as_attack: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Protocol(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Protocol(_) => EXIT_PROTOCOL,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Protocol(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Protocol(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = read(path)?;
    ScenarioConfig::from_json(&text)
        .map_err(|e: ConfigError| CliError::Config(format!("{}: {e}", path.display())))
}

/// Runs a parsed command; returns what to print on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Authenticate {
            scenario,
            seed,
            out,
        } => authenticate(&scenario, seed, out.as_deref()),
        Command::Attack {
            scenario,
            seed,
            sweep,
            trials,
            raw,
            jobs,
            out,
        } => attack(
            &scenario,
            seed,
            sweep,
            trials,
            raw.as_deref(),
            jobs,
            out.as_deref(),
        ),
        Command::Replay {
            transcript,
            as_attack,
        } => replay(&transcript, as_attack),
    }
}

fn validate(path: &Path) -> Result<String, CliError> {
    let cfg = load_scenario(path)?;
    let integrators = cfg
        .topology
        .nodes
        .iter()
        .filter(|n| n.role == crate::chiplet::Role::Integrator)
        .count();
    Ok(format!(
        "ok: {} chiplets ({} integrators, {} third-party), {} links\n",
        cfg.topology.nodes.len(),
        integrators,
        cfg.topology.nodes.len() - integrators,
        cfg.links().len()
    ))
}

fn run_session(
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<(AuthReport, Transcript, String), CliError> {
    let sip = cfg
        .build_sip(seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = sip.manifest.to_json();
    let mut engine = Engine::new(sip, cfg.protocol.clone(), seed);
    let report = engine.run()?;
    let transcript = Transcript {
        seed,
        session: *engine.session(),
        config: cfg.clone(),
        messages: engine.transcript().to_vec(),
    };
    Ok((report, transcript, manifest))
}

fn authenticate(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<String, CliError> {
    let cfg = load_scenario(path)?;
    let seed = seed.unwrap_or(cfg.effective_seed(0));
    let (report, transcript, manifest) = run_session(&cfg, seed)?;

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write(&dir.join("report.json"), &json)?;
        write(&dir.join("transcript.jsonl"), &transcript.to_jsonl())?;
        write(&dir.join("manifest.json"), &(manifest + "\n"))?;
    }
    Ok(summary(&report))
}

/// Human-readable session summary.
pub fn summary(report: &AuthReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "session {} nonce {:032x}",
        report.session_id, report.nonce
    );
    let trusted: Vec<String> = report
        .trusted_integrators
        .iter()
        .map(u64::to_string)
        .collect();
    let _ = writeln!(
        s,
        "trusted integrators: {} (quorum {} of {})",
        trusted.join(" "),
        report.quorum.t,
        report.quorum.n
    );
    if !report.excluded_integrators.is_empty() {
        let ex: Vec<String> = report
            .excluded_integrators
            .iter()
            .map(u64::to_string)
            .collect();
        let _ = writeln!(s, "excluded integrators: {}", ex.join(" "));
    }
    for c in report.third_party() {
        let verdict = match c.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Anomalous => "anomalous",
        };
        let detail = match c.diagnosis.as_ref().map(|d| &d.classification) {
            Some(Classification::ChipletFault) => " (chiplet fault)".to_string(),
            Some(Classification::LinkFault(links)) => {
                let l: Vec<String> = links.iter().map(ToString::to_string).collect();
                format!(" (link fault {})", l.join(" "))
            }
            Some(Classification::Transient) => " (transient)".to_string(),
            Some(Classification::Authentic) => String::new(),
            None if c.cause.is_some() => " (share pooling incomplete)".to_string(),
            None => String::new(),
        };
        let _ = writeln!(s, "chiplet {}: {verdict}{detail}", c.id);
    }
    let (cycles, ns) = latency_model(report, report.clock_ghz);
    let _ = writeln!(
        s,
        "critical path: {cycles} cycles ({ns:.1} ns at {} GHz), session {} cycles",
        report.clock_ghz, report.session_cycles
    );
    if report.all_authenticated() {
        s.push_str("result: all authenticated\n");
    } else {
        let bad: Vec<String> = report
            .chiplets
            .iter()
            .filter(|c| c.verdict != Verdict::Pass)
            .map(|c| c.id.to_string())
            .collect();
        let _ = writeln!(s, "result: not authenticated: {}", bad.join(" "));
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn attack(
    path: &Path,
    seed: Option<u64>,
    sweep: bool,
    trials: Option<usize>,
    raw: Option<&Path>,
    jobs: usize,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let cfg = load_scenario(path)?;
    let seed = seed.unwrap_or(cfg.effective_seed(0));
    let mut spec: AttackSpec = cfg.attacks.clone();
    if let Some(t) = trials {
        if t == 0 {
            return Err(CliError::Config("--trials must be at least 1".into()));
        }
        spec.trials = t;
    }
    if !sweep {
        spec.lengths = vec![cfg.protocol.signature_length_bits];
    }
    if spec.lengths.iter().any(|&l| spec.flips > l) {
        return Err(CliError::Config("flips exceed the signature length".into()));
    }
    let reports = run_sweep(&spec, seed, jobs)?;
    if let Some(raw) = raw {
        write(raw, &sweep_jsonl(&reports))?;
    }
    let csv = sweep_csv(&reports);
    match out {
        Some(p) => {
            write(p, &csv)?;
            Ok(format!("wrote {} rows to {}\n", reports.len(), p.display()))
        }
        None => Ok(csv),
    }
}

fn replay(path: &Path, as_attack: bool) -> Result<String, CliError> {
    let text = read(path)?;
    let recorded = Transcript::from_jsonl(&text)
        .map_err(|e: TranscriptError| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = &recorded.config;

    if !as_attack {
        let (_, rerun, _) = run_session(cfg, recorded.seed)?;
        if rerun.session != recorded.session {
            return Err(CliError::Protocol(
                "replay diverged: session context differs".into(),
            ));
        }
        if let Some(i) = (0..recorded.messages.len().max(rerun.messages.len()))
            .find(|&i| recorded.messages.get(i) != rerun.messages.get(i))
        {
            return Err(CliError::Protocol(format!(
                "replay diverged at message {}",
                i + 1
            )));
        }
        return Ok(format!(
            "replay matches: {} messages\n",
            recorded.messages.len()
        ));
    }

    // Resume the session counter past the recorded session so the attacker
    // faces a fresh nonce.
    let fresh = SessionSource::resume(recorded.seed, recorded.session.session_id).next_session();
    let sip = cfg
        .build_sip(recorded.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut guard = ReplayGuard::new(fresh);
    let (mut replayed, mut accepted, mut total_hd) = (0u32, 0u32, 0u64);
    for msg in recorded
        .messages
        .iter()
        .filter(|m| m.kind == MessageKind::Response)
    {
        let Ok(bytes) = <[u8; 32]>::try_from(msg.payload.as_slice()) else {
            continue;
        };
        let observed = Digest256(bytes);
        let expected =
            crate::chiplet::expected_digest(&sip.manifest, msg.src, sip.manifest.challenge, &fresh)
                .map_err(|e| CliError::Protocol(e.to_string()))?;
        replayed += 1;
        total_hd += u64::from(hamming_distance(&observed, &expected));
        if guard
            .check(msg.dst, msg.src, &observed, &expected)
            .accepted()
        {
            accepted += 1;
        }
    }
    let mean = if replayed == 0 {
        0.0
    } else {
        total_hd as f64 / f64::from(replayed)
    };
    Ok(format!(
        "replayed {replayed} responses into session {}: {accepted} accepted, mean distance {mean:.2}\n",
        fresh.session_id
    ))
}

/// Entry point shared by the binary and tests.
pub fn main_with_args<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                (code, text, String::new())
            } else {
                (code, String::new(), text)
            };
        }
    };
    match run(cli) {
        Ok(out) => (EXIT_OK, out, String::new()),
        Err(e) => (
            e.exit_code(),
            String::new(),
            format!("error: {}\n", e.message()),
        ),
    }
}
