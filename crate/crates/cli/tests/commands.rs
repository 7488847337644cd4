//! The `proctor` command line, both in-process and as a binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::Arc;

use clap::Parser;
use proctor_cli::commands::{emit, exit, run, Cli, Format};
use proctor_cli::keys::read_identity;
use proctor_core::domain::Role;
use proctor_core::integrity::verify_reveal;
use proctor_core::orchestrator::{requests, ProtocolConfig, VirtualSleeper};
use proctor_core::sim::world::{payload, sim_descriptor, SimConnector, SimModel};
use proctor_core::sim::ItemTag;
use proctor_core::{Digest, Orchestrator, Salt, SigningIdentity, StreamId, SuitePayload};
use serde_json::Value;

fn cli(args: &[&str]) -> Cli {
    Cli::parse_from(std::iter::once("proctor").chain(args.iter().copied()))
}

/// Runs a command and returns (exit code, stdout, stderr).
fn call(format: Format, args: &[&str]) -> (u8, String, String) {
    let c = cli(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = emit(format, run(c), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bin() -> Process {
    let mut p = Process::new(env!("CARGO_BIN_EXE_proctor"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("PROCTOR_")) {
        p.env_remove(k);
    }
    p
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// An orchestrator with one published suite.
fn published_instance() -> (Orchestrator, proctor_core::TestId) {
    let cfg = ProtocolConfig {
        capacity: 1,
        hold_fraction: 0.0,
        min_reviews: 2,
        ..ProtocolConfig::default()
    };
    let connector = Arc::new(SimConnector::new());
    let mut orch = Orchestrator::new(cfg, SigningIdentity::from_secret([9; 32]), [1; 32], Arc::clone(&connector) as _)
        .unwrap()
        .with_sleeper(Arc::new(VirtualSleeper::default()));
    let alice = SigningIdentity::from_secret([1; 32]);
    orch.register_participant(requests::registration(&alice, Role::Contributor, Vec::new(), 200)).unwrap();
    let reviewers: Vec<_> = (10..13).map(|i| SigningIdentity::from_secret([i; 32])).collect();
    for r in &reviewers {
        orch.register_participant(requests::registration(r, Role::Reviewer, Vec::new(), 100)).unwrap();
    }
    let creator = SigningIdentity::from_secret([2; 32]);
    orch.register_participant(requests::registration(&creator, Role::ModelCreator, Vec::new(), 0)).unwrap();
    connector.insert(
        "sim://m",
        Arc::new(SimModel {
            run_key: [0; 32],
            name: "m".into(),
            theta: 0.5,
            leaks: Default::default(),
        }),
    );
    let stream = StreamId::named("general");
    orch.register_model(requests::model_registration(&creator, sim_descriptor("sim://m"), [stream].into(), 0))
        .unwrap();
    let first = orch
        .submit_test(requests::suite_submission(&alice, stream, payload(&ItemTag::Normal, 1, 5), Salt([1; 16])))
        .unwrap()
        .id();
    for r in &reviewers {
        let id = requests::participant_id(r);
        if orch.review_queue(&id).is_empty() {
            continue;
        }
        let (req, sig) = requests::reveal_request(r, first);
        orch.reveal(req, sig).unwrap();
        let (body, sig) = requests::review(r, first, proctor_core::domain::Rating::new(1).unwrap(), "");
        orch.submit_review(id, body, sig).unwrap();
    }
    orch.submit_test(requests::suite_submission(&alice, stream, payload(&ItemTag::Normal, 2, 5), Salt([2; 16])))
        .unwrap();
    (orch, first)
}

#[test]
fn keygen_writes_a_private_key_and_never_prints_it() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("me.key");
    let k = key.to_str().unwrap();
    let (code, out, _) = call(Format::Text, &["--key", k, "keygen"]);
    assert_eq!(code, exit::OK);
    let id = read_identity(&key).unwrap();
    let secret = hex::encode(id.secret_bytes());
    assert!(!out.contains(&secret));
    assert!(out.contains(&requests::participant_id(&id).to_hex()));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(fs::metadata(&key).unwrap().permissions().mode() & 0o777, 0o600);
    }

    let (code, out, _) = call(Format::Json, &["--key", k, "keygen"]);
    assert_eq!(code, exit::INVALID_INPUT);
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["error"], "KeyExists");
    assert!(!out.contains(&secret));
    assert_eq!(read_identity(&key).unwrap().public_key(), id.public_key());
}

#[test]
fn commit_round_trips_with_the_server_check() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("c.key");
    let k = key.to_str().unwrap();
    assert_eq!(call(Format::Text, &["--key", k, "keygen"]).0, 0);
    let p = payload(&ItemTag::Normal, 4, 3);
    let path = dir.path().join("suite.json");
    fs::write(&path, serde_json::to_vec(&p).unwrap()).unwrap();

    let (code, out, _) = call(Format::Json, &["--key", k, "commit", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let doc: Value = serde_json::from_str(&out).unwrap();
    let digest: Digest = doc["digest"].as_str().unwrap().parse().unwrap();
    let salt: Salt = doc["salt"].as_str().unwrap().parse().unwrap();
    let parsed: SuitePayload = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert!(verify_reveal(&digest, &parsed.canonical_bytes(), &salt));

    // The salt is reused for the same payload and stored only encrypted.
    let (_, again, _) = call(Format::Json, &["--key", k, "commit", path.to_str().unwrap()]);
    assert_eq!(serde_json::from_str::<Value>(&again).unwrap()["salt"], doc["salt"]);
    let vault = fs::read_to_string(dir.path().join("c.key.salts")).unwrap();
    assert!(!vault.contains(&salt.to_hex()));
}

#[test]
fn verify_bundle_accepts_pristine_and_names_tampered_files() {
    let (orch, first) = published_instance();
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    orch.bundle(&first).unwrap().write_dir(&bundle_dir).unwrap();
    let b = bundle_dir.to_str().unwrap();
    let key = orch.server_key().to_hex();

    let (code, out, _) = call(Format::Text, &["verify-bundle", b, "--server-key", &key]);
    assert_eq!(code, exit::OK, "{out}");
    assert!(out.starts_with("ok"));

    let responses = bundle_dir.join("responses");
    let victim = fs::read_dir(&responses).unwrap().next().unwrap().unwrap().path();
    let mut bytes = fs::read(&victim).unwrap();
    bytes[10] ^= 0x04;
    fs::write(&victim, bytes).unwrap();
    let name = format!("responses/{}", victim.file_name().unwrap().to_str().unwrap());

    let (code, out, _) = call(Format::Json, &["verify-bundle", b]);
    assert_eq!(code, exit::CHECK_FAILED);
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["error"], "BundleInvalid");
    assert_eq!(doc["file"], name);

    let status = bin().args(["verify-bundle", b]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains(&name));
}

#[test]
fn replay_prints_the_matching_hash_and_rejects_tampering() {
    let (orch, _) = published_instance();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("audit.log");
    fs::write(&log, orch.audit_text()).unwrap();
    let expected = orch.leaderboards().unwrap().hash().to_hex();

    let out = bin().args(["replay", log.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(&expected));

    let mut text = orch.audit_text().into_bytes();
    let mid = text.len() / 2;
    text[mid] = if text[mid] == b'A' { b'B' } else { b'A' };
    fs::write(&log, text).unwrap();
    let (code, _, err) = call(Format::Text, &["replay", log.to_str().unwrap()]);
    assert_eq!(code, exit::CHECK_FAILED);
    assert!(err.contains("ReplayFailed"));
}

#[test]
fn sim_exit_code_follows_assertions() {
    let honest = scenarios().join("honest.toml");
    let out = bin()
        .args(["sim", "--scenario", honest.to_str().unwrap(), "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[PASS] fidelity"));

    let dir = tempfile::tempdir().unwrap();
    let failing = dir.path().join("failing.toml");
    let text = fs::read_to_string(&honest).unwrap().replace("rounds = 60", "rounds = 5")
        + "\n[[assertions]]\nmetric = \"published\"\nop = \">\"\nvalue = 1000.0\n";
    fs::write(&failing, text).unwrap();
    let report = dir.path().join("report.json");
    let (code, out, _) = call(
        Format::Text,
        &["sim", "--scenario", failing.to_str().unwrap(), "--out", report.to_str().unwrap()],
    );
    assert_eq!(code, exit::CHECK_FAILED);
    assert!(out.contains("[FAIL] published"));
    let doc: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(doc["rounds"], 5);

    fs::write(&failing, "name = \"x\"\nrounds = 0\n").unwrap();
    let (code, _, err) = call(Format::Text, &["sim", "--scenario", failing.to_str().unwrap()]);
    assert_eq!(code, exit::INVALID_INPUT);
    assert!(err.contains("InvalidConfig"));
}

#[test]
fn sweep_writes_one_row_per_point_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.toml");
    let text = fs::read_to_string(scenarios().join("honest.toml")).unwrap().replace("rounds = 60", "rounds = 4");
    fs::write(&small, text).unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let (code, _, err) = call(
        Format::Text,
        &[
            "sweep",
            "--scenario",
            small.to_str().unwrap(),
            "--seeds",
            "1,2,3",
            "--grid",
            "capacity=16,64",
            "--out",
            csv_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("capacity,seed"));
}

#[test]
fn serve_config_takes_environment_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("proctor.toml");
    fs::write(&cfg_path, "capacity = 8\nhold_fraction = 0.5\n").unwrap();
    let env = vec![
        ("PROCTOR_CAPACITY".to_string(), "12".to_string()),
        ("PROCTOR_SERVER".to_string(), "http://elsewhere".to_string()),
        ("HOME".to_string(), "/tmp".to_string()),
    ];
    let cfg = proctor_cli::commands::load_config(Some(&cfg_path), env).unwrap();
    assert_eq!(cfg.capacity, 12);
    assert_eq!(cfg.hold_fraction, 0.5);

    // The server opens its data directory with a key file and derives the
    // same beacon on restart.
    let key = dir.path().join("server.key");
    proctor_cli::keys::write_identity(&key, &SigningIdentity::from_secret([3; 32]), false).unwrap();
    let data = dir.path().join("data");
    let first = proctor_cli::commands::open_server(&key, cfg.clone(), &data).unwrap();
    let state = first.state().clone();
    drop(first);
    let reopened = proctor_cli::commands::open_server(&key, cfg, &data).unwrap();
    assert_eq!(reopened.state(), &state);
}
