//! Command-line surface.
//!
//! Every command returns an [`Output`] or a [`CliError`]; `--format json`
//! turns either into a single JSON document on stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chacha20poly1305::aead::OsRng;
use clap::{Parser, Subcommand, ValueEnum};
use proctor_core::domain::{AssignmentId, EndpointDescriptor, Rating, Role};
use proctor_core::integrity::commit;
use proctor_core::orchestrator::{replay_text, requests, Event, ENV_PREFIX};
use proctor_core::reservoir::{verify_bundle, PublicationBundle};
use proctor_core::sim::{run_scenario, sweep, sweep_csv, Scenario};
use proctor_core::{
    canonical, ModelId, ModelScore, Orchestrator, ProtocolConfig, PublicKey, StreamId,
    SigningIdentity, SuitePayload, TestId,
};
use serde_json::json;

use crate::api::Board;
use crate::client::{ApiClient, ClientError};
use crate::connector::HttpConnector;
use crate::keys::{derive_secret, payload_hash, read_identity, write_identity, KeyError, SaltVault};

#[derive(Debug, Parser)]
#[command(name = "proctor", version, about = "Proctored benchmark coordination server and tooling")]
pub struct Cli {
    /// Base URL of the coordination server.
    #[arg(long, global = true, env = "PROCTOR_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Identity key file (the server's own key for `serve`).
    #[arg(long, global = true, env = "PROCTOR_KEY", default_value = "identity.key")]
    pub key: PathBuf,
    #[arg(long, global = true, env = "PROCTOR_FORMAT", value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Contributor,
    Reviewer,
    ModelCreator,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Contributor => Role::Contributor,
            RoleArg::Reviewer => Role::Reviewer,
            RoleArg::ModelCreator => Role::ModelCreator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoardKind {
    Contributors,
    Reviewers,
    Models,
}

impl BoardKind {
    fn path(self) -> &'static str {
        match self {
            BoardKind::Contributors => "contributors",
            BoardKind::Reviewers => "reviewers",
            BoardKind::Models => "models",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a new identity key file (mode 0600).
    Keygen {
        #[arg(long)]
        force: bool,
    },
    /// Run the coordination server.
    Serve {
        /// Protocol config (TOML); PROCTOR_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "proctor-data")]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Wall-clock milliseconds per logical tick; 0 leaves the clock still.
        #[arg(long, default_value_t = 8_640_000)]
        tick_ms: u64,
    },
    /// Run a simulation scenario; exits 0 iff its assertions hold.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the full JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over a parameter grid and seeds; writes CSV.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long = "grid", value_parser = parse_axis)]
        grid: Vec<(String, Vec<f64>)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register this identity with the server.
    Register {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, default_value_t = 0)]
        stake: u64,
    },
    /// Commit to a local payload: prints the digest and salt and keeps the
    /// salt in the encrypted vault.
    Commit { payload: PathBuf },
    /// Submit a committed payload to a stream.
    Submit {
        payload: PathBuf,
        #[arg(long, default_value = "general")]
        stream: String,
    },
    /// Register a model endpoint.
    RegisterModel {
        #[arg(long)]
        url: String,
        /// Bearer token for the endpoint; prefer the environment variable.
        #[arg(long, env = "PROCTOR_ENDPOINT_TOKEN", hide_env_values = true, default_value = "")]
        token: String,
        #[arg(long, default_value_t = 1.0)]
        max_qps: f64,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
        #[arg(long = "stream", default_value = "general")]
        streams: Vec<String>,
        #[arg(long, default_value_t = 0)]
        nonce: u64,
    },
    /// Enroll a model in the next cohort window of a stream.
    JoinCohort {
        model: ModelId,
        #[arg(long, default_value = "general")]
        stream: String,
    },
    /// List this reviewer's open review tasks.
    Queue,
    /// Fetch the watermarked item images of an assignment.
    Reveal {
        assignment: AssignmentId,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rate a suite in {-1, 0, 1, 2}.
    Review {
        test: TestId,
        #[arg(allow_negative_numbers = true)]
        rating: i64,
        #[arg(long, default_value = "")]
        rationale: String,
    },
    /// Show a leaderboard.
    Boards {
        #[arg(value_enum)]
        kind: BoardKind,
    },
    /// Download a published bundle into a directory.
    Bundle {
        test: TestId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Download the audit log.
    Audit {
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every hash and signature in a bundle directory.
    VerifyBundle {
        path: PathBuf,
        /// Server public key (hex); without it the manifest signature is
        /// checked against the key the manifest names.
        #[arg(long)]
        server_key: Option<PublicKey>,
    },
    /// Rebuild state from an audit log and check every leaderboard hash.
    Replay { path: PathBuf },
}

fn parse_axis(text: &str) -> Result<(String, Vec<f64>), String> {
    let (key, values) = text.split_once('=').ok_or("expected key=v1,v2,...")?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((key.trim().to_string(), values))
}

/// Successful command result: text for humans, JSON for machines, and the
/// exit code.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub json: serde_json::Value,
    pub code: u8,
}

impl Output {
    fn ok(text: String, json: serde_json::Value) -> Self {
        Self { text, json, code: 0 }
    }
}

pub mod exit {
    pub const OK: u8 = 0;
    /// A verification, replay or scenario check failed.
    pub const CHECK_FAILED: u8 = 1;
    pub const INVALID_INPUT: u8 = 2;
    pub const SERVER: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: u8,
    /// Extra structured fields, e.g. the offending bundle file.
    pub detail: serde_json::Value,
}

impl CliError {
    fn new(kind: &str, message: impl Into<String>, code: u8) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            code,
            detail: serde_json::Value::Null,
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new("InvalidInput", message, exit::INVALID_INPUT)
    }
}

impl From<KeyError> for CliError {
    fn from(e: KeyError) -> Self {
        let kind = match e {
            KeyError::Io { .. } => "Io",
            KeyError::Exists(_) => "KeyExists",
            KeyError::TooOpen(_) => "KeyPermissions",
            KeyError::Malformed(_) => "KeyMalformed",
            KeyError::Vault(_) => "VaultCorrupt",
        };
        let code = if kind == "Io" { exit::IO } else { exit::INVALID_INPUT };
        CliError::new(kind, e.to_string(), code)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::new(e.kind(), e.to_string(), exit::SERVER)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display()), exit::IO))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("Io", format!("{}: {e}", dir.display()), exit::IO))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display()), exit::IO))
}

fn read_payload(path: &Path) -> Result<SuitePayload, CliError> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::input(format!("{}: not a suite payload: {e}", path.display())))
}

fn scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| CliError::input("scenario is not UTF-8"))?;
    Scenario::from_toml_str(&text).map_err(|e| CliError::new("InvalidConfig", e.to_string(), exit::INVALID_INPUT))
}

/// Loads a protocol config file (or defaults) and applies `PROCTOR_*`
/// overrides from `env`.
pub fn load_config<I>(path: Option<&Path>, env: I) -> Result<ProtocolConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = match path {
        Some(p) => {
            let text = String::from_utf8(read_file(p)?).map_err(|_| CliError::input("config is not UTF-8"))?;
            ProtocolConfig::from_toml_str(&text).map_err(|e| CliError::new("InvalidConfig", e.to_string(), exit::INVALID_INPUT))?
        }
        None => ProtocolConfig::default(),
    };
    let env = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && !CLI_ENV.contains(&k.as_str()));
    cfg.apply_env(env).map_err(|e| CliError::new("InvalidConfig", e.to_string(), exit::INVALID_INPUT))?;
    Ok(cfg)
}

/// Variables read by the CLI itself rather than the protocol config.
const CLI_ENV: &[&str] = &["PROCTOR_SERVER", "PROCTOR_KEY", "PROCTOR_FORMAT", "PROCTOR_ENDPOINT_TOKEN", "PROCTOR_LOG"];

/// Opens the persisted orchestrator for `serve`. The beacon master is
/// derived from the server key so restarts reproduce the same seeds.
pub fn open_server(key: &Path, config: ProtocolConfig, data: &Path) -> Result<Orchestrator, CliError> {
    let server = read_identity(key)?;
    let master = derive_secret(&server, "beacon-master");
    Orchestrator::open(data, config, server, master, Arc::new(HttpConnector))
        .map_err(|e| CliError::new("Startup", e.to_string(), exit::SERVER))
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    let client = || ApiClient::new(&cli.server);
    let identity = || read_identity(&cli.key).map_err(CliError::from);
    match cli.command {
        Command::Keygen { force } => {
            let id = SigningIdentity::generate(&mut OsRng);
            write_identity(&cli.key, &id, force)?;
            let pid = requests::participant_id(&id);
            Ok(Output::ok(
                format!("wrote {}\nparticipant {pid}", cli.key.display()),
                json!({ "path": cli.key, "participant": pid }),
            ))
        }
        Command::Serve {
            ref config,
            ref data,
            listen,
            tick_ms,
        } => {
            let cfg = load_config(config.as_deref(), std::env::vars())?;
            let orch = open_server(&cli.key, cfg, data)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("Io", e.to_string(), exit::IO))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen)
                    .await
                    .map_err(|e| CliError::new("Io", format!("{listen}: {e}"), exit::IO))?;
                tracing::info!(%listen, "serving");
                let tick = (tick_ms > 0).then(|| Duration::from_millis(tick_ms));
                crate::server::serve(listener, Arc::new(Mutex::new(orch)), tick)
                    .await
                    .map_err(|e| CliError::new("Io", e.to_string(), exit::IO))
            })?;
            Ok(Output::ok("server stopped".into(), json!({ "stopped": true })))
        }
        Command::Sim { scenario: ref path, seed, ref out } => {
            let sc = scenario(path)?;
            let report = run_scenario(&sc, seed).map_err(|e| CliError::new("InvalidConfig", e.to_string(), exit::INVALID_INPUT))?;
            if let Some(out) = out {
                write_file(out, report.to_json().as_bytes())?;
            }
            let mut text = format!("scenario {} seed {seed}: {} rounds\n", report.scenario, report.rounds);
            for m in &report.models {
                let score = m.score.map_or("unranked".to_string(), |s| format!("{s:.4}"));
                text += &format!("  model {:<12} theta {:.2} score {score} converged {}\n", m.name, m.theta, m.converged);
            }
            for a in &report.assertions {
                let actual = a.actual.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                text += &format!(
                    "  [{}] {} {} {} (got {actual})\n",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.metric,
                    a.op.symbol(),
                    a.value
                );
            }
            text += &format!("report {}", report.hash());
            let json: serde_json::Value = serde_json::from_str(&report.to_json()).expect("report is JSON");
            let code = if report.passed() { exit::OK } else { exit::CHECK_FAILED };
            Ok(Output { text, json, code })
        }
        Command::Sweep {
            scenario: ref path,
            ref seeds,
            ref grid,
            ref out,
        } => {
            let sc = scenario(path)?;
            let grid: BTreeMap<String, Vec<f64>> = grid.iter().cloned().collect();
            let rows = sweep(&sc, &grid, seeds).map_err(|e| CliError::new("InvalidConfig", e.to_string(), exit::INVALID_INPUT))?;
            let mut csv = Vec::new();
            sweep_csv(&rows, &mut csv).map_err(|e| CliError::new("Io", e.to_string(), exit::IO))?;
            let csv = String::from_utf8(csv).expect("csv is UTF-8");
            if let Some(out) = out {
                write_file(out, csv.as_bytes())?;
            }
            Ok(Output::ok(csv.trim_end().to_string(), json!({ "rows": rows.len(), "csv": csv })))
        }
        Command::Register { role, stake } => {
            let id = identity()?;
            let pid = client().register(&requests::registration(&id, role.into(), Vec::new(), stake))?;
            Ok(Output::ok(format!("registered {pid}"), json!({ "participant": pid })))
        }
        Command::Commit { ref payload } => {
            let id = identity()?;
            let p = read_payload(payload)?;
            let bytes = p.canonical_bytes();
            let mut vault = SaltVault::open(&SaltVault::path_for(&cli.key), &id)?;
            let salt = vault.get_or_create(&payload_hash(&bytes))?;
            let c = commit(&bytes, &salt);
            Ok(Output::ok(
                format!("digest {}\nsalt {}", c.digest, salt),
                json!({ "digest": c.digest, "salt": salt, "items": p.items.len() }),
            ))
        }
        Command::Submit { ref payload, ref stream } => {
            let id = identity()?;
            let p = read_payload(payload)?;
            let mut vault = SaltVault::open(&SaltVault::path_for(&cli.key), &id)?;
            let salt = vault.get_or_create(&payload_hash(&p.canonical_bytes()))?;
            let sub = requests::suite_submission(&id, StreamId::named(stream), p, salt);
            let digest = sub.body.digest;
            let outcome = client().submit(&sub)?;
            let text = format!("suite {} {:?} (digest {digest})", outcome.id(), outcome);
            Ok(Output::ok(text, json!({ "outcome": outcome, "digest": digest })))
        }
        Command::RegisterModel {
            ref url,
            ref token,
            max_qps,
            timeout_ms,
            ref streams,
            nonce,
        } => {
            let id = identity()?;
            let desc = EndpointDescriptor {
                url: url.clone(),
                auth_token: token.clone(),
                max_qps,
                timeout_ms,
            };
            desc.validate().map_err(CliError::input)?;
            let streams: BTreeSet<StreamId> = streams.iter().map(|s| StreamId::named(s)).collect();
            let model = client().register_model(&requests::model_registration(&id, desc, streams, nonce))?;
            Ok(Output::ok(format!("model {model}"), json!({ "model": model })))
        }
        Command::JoinCohort { model, ref stream } => {
            let id = identity()?;
            let stream = StreamId::named(stream);
            let sig = requests::cohort_join(&id, model, stream);
            let cohort = client().join_cohort(&model, stream, sig)?;
            Ok(Output::ok(format!("cohort {cohort}"), json!({ "cohort": cohort })))
        }
        Command::Queue => {
            let id = identity()?;
            let tasks = client().queue(&requests::participant_id(&id))?;
            let mut text = format!("{} open tasks", tasks.len());
            for t in &tasks {
                text += &format!("\n  assignment {} suite {} items {} deadline {}", t.assignment, t.test_id, t.item_count, t.deadline);
            }
            Ok(Output::ok(text, json!({ "tasks": tasks })))
        }
        Command::Reveal { assignment, ref out } => {
            let id = identity()?;
            let c = client();
            let reviewer = requests::participant_id(&id);
            let test = c
                .queue(&reviewer)?
                .into_iter()
                .find(|t| t.assignment == assignment)
                .ok_or_else(|| CliError::new("NotAssigned", "no open task with this assignment", exit::INVALID_INPUT))?
                .test_id;
            let (_, sig) = requests::reveal_request(&id, test);
            let view = c.reveal(&assignment, &reviewer, &sig)?;
            let pngs = view.png_bytes().map_err(|e| CliError::new("Decode", e.to_string(), exit::SERVER))?;
            let mut files = Vec::new();
            for (i, png) in pngs.iter().enumerate() {
                let path = out.join(format!("{}-{i}.png", view.test_id));
                write_file(&path, png)?;
                files.push(path);
            }
            let text = format!("{} of {} items revealed to {}", files.len(), view.item_count, out.display());
            Ok(Output::ok(text, json!({ "test_id": view.test_id, "files": files, "watermark": view.watermark })))
        }
        Command::Review {
            test,
            rating,
            ref rationale,
        } => {
            let rating = Rating::new(rating).map_err(|e| CliError::input(e.to_string()))?;
            let id = identity()?;
            let (body, sig) = requests::review(&id, test, rating, rationale);
            client().review(requests::participant_id(&id), body, sig)?;
            Ok(Output::ok(format!("review of {test} accepted"), json!({ "test_id": test })))
        }
        Command::Boards { kind } => {
            let board = client().leaderboard(kind.path())?;
            let json = serde_json::to_value(&board).expect("board is JSON");
            Ok(Output::ok(board_text(&board.board), json))
        }
        Command::Bundle { test, ref out } => {
            let bundle = client().bundle(&test)?;
            bundle
                .write_dir(out)
                .map_err(|e| CliError::new("Io", format!("{}: {e}", out.display()), exit::IO))?;
            Ok(Output::ok(
                format!("{} files written to {}", bundle.files.len(), out.display()),
                json!({ "files": bundle.files.len() }),
            ))
        }
        Command::Audit { from, ref out } => {
            let text = client().audit(from)?;
            let lines = text.lines().count();
            match out {
                Some(out) => {
                    write_file(out, text.as_bytes())?;
                    Ok(Output::ok(format!("{lines} entries written to {}", out.display()), json!({ "entries": lines })))
                }
                None => Ok(Output::ok(text.trim_end().to_string(), json!({ "entries": lines, "log": text }))),
            }
        }
        Command::VerifyBundle { ref path, server_key } => verify_bundle_dir(path, server_key.as_ref()),
        Command::Replay { ref path } => replay_file(path),
    }
}

fn board_text(board: &Board) -> String {
    let score = |s: &ModelScore| s.value().map_or("unranked".to_string(), |v| format!("{v:.4}"));
    let mut out = Vec::new();
    match board {
        Board::Contributors(es) => {
            for (i, e) in es.iter().enumerate() {
                out.push(format!("{:>3}. {} {:.4} ({} rated suites)", i + 1, e.id, e.score, e.suites_rated));
            }
        }
        Board::Reviewers(es) => {
            for (i, e) in es.iter().enumerate() {
                out.push(format!("{:>3}. {} {:.4} ({} reviews)", i + 1, e.id, e.score, e.reviews));
            }
        }
        Board::Models(m) => {
            for b in &m.streams {
                out.push(format!("stream {}", b.stream));
                for (i, e) in b.entries.iter().enumerate() {
                    out.push(format!("{:>3}. {} {} {:?}", i + 1, e.id, score(&e.score), e.status));
                }
            }
        }
    }
    if out.is_empty() {
        "(empty)".into()
    } else {
        out.join("\n")
    }
}

pub fn verify_bundle_dir(path: &Path, server_key: Option<&PublicKey>) -> Result<Output, CliError> {
    let bundle = PublicationBundle::read_dir(path)
        .map_err(|e| CliError::new("Io", format!("{}: {e}", path.display()), exit::IO))?;
    match verify_bundle(&bundle, server_key) {
        Ok(s) => Ok(Output::ok(
            format!("ok: suite {} ({} items, {} reviews, {} score records)", s.test_id, s.items, s.reviews, s.records),
            json!({ "ok": true, "test_id": s.test_id, "items": s.items, "reviews": s.reviews, "records": s.records }),
        )),
        Err(e) => Err(CliError {
            kind: "BundleInvalid".into(),
            message: format!("{}: {}", e.file, e.reason),
            code: exit::CHECK_FAILED,
            detail: json!({ "file": e.file, "reason": e.reason }),
        }),
    }
}

pub fn replay_file(path: &Path) -> Result<Output, CliError> {
    let bytes = read_file(path)?;
    let report = replay_text(&bytes).map_err(|e| CliError::new("ReplayFailed", e.to_string(), exit::CHECK_FAILED))?;
    // Replay recomputes each rebuild; this cross-checks the count against
    // the raw log as well.
    let logged = proctor_core::integrity::parse_log_bytes(&bytes)
        .0
        .iter()
        .filter(|r| matches!(canonical::from_bytes::<Event>(&r.payload), Ok(Event::LeaderboardsRebuilt { .. })))
        .count();
    if logged != report.board_hashes.len() {
        return Err(CliError::new("ReplayFailed", "leaderboard rebuild count differs from the log", exit::CHECK_FAILED));
    }
    let hash = report.final_board_hash();
    let text = match hash {
        Some(h) => format!("ok: {} events, {} leaderboard hashes match\nfinal {h}", report.events, logged),
        None => format!("ok: {} events, no leaderboard rebuilds", report.events),
    };
    Ok(Output::ok(
        text,
        json!({ "ok": true, "events": report.events, "rebuilds": logged, "final_hash": hash }),
    ))
}

/// Prints the result in the chosen format and returns the exit code.
pub fn emit(format: Format, result: Result<Output, CliError>, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match (format, result) {
        (Format::Text, Ok(o)) => {
            let _ = writeln!(out, "{}", o.text);
            o.code
        }
        (Format::Json, Ok(o)) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&o.json).expect("JSON value"));
            o.code
        }
        (Format::Text, Err(e)) => {
            let _ = writeln!(err, "error ({}): {}", e.kind, e.message);
            e.code
        }
        (Format::Json, Err(e)) => {
            let mut doc = json!({ "error": e.kind, "message": e.message });
            if let serde_json::Value::Object(extra) = e.detail {
                doc.as_object_mut().expect("object").extend(extra);
            }
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("JSON value"));
            e.code
        }
    }
}
