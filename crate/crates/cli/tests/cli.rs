use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_examchain");

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// A scratch directory used as both working directory and data home.
struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn home(&self) -> PathBuf {
        self.path("home")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .env("EXAMCHAIN_HOME", self.home())
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Runs with `--report-json`, asserting the exit code and that stdout parses.
    fn json(&self, args: &[&str], code: i32) -> Value {
        let mut full = args.to_vec();
        full.push("--report-json");
        let out = self.run(&full);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?} printed malformed JSON: {e}"))
    }

    fn tx(&self, signer: &str, args: &[&str]) -> i32 {
        let mut full = vec!["tx", "--as", signer];
        full.extend_from_slice(args);
        self.code(&full)
    }
}

#[test]
fn keygen_creates_then_reloads_a_seed_file() {
    let sb = Sandbox::new();
    let file = sb.path("s.txt");
    let file = file.to_str().unwrap();
    let first = sb.json(&["keygen", "--seed-file", file], 0);
    assert_eq!(first["created"], file);
    assert_eq!(first["public_key"].as_str().unwrap().len(), 64);
    assert_eq!(first["address"].as_str().unwrap().len(), 40);
    let again = sb.json(&["keygen", "--seed-file", file], 0);
    assert_eq!(again["address"], first["address"]);
    assert!(again.get("created").is_none());

    // text output names the same fields
    let text = sb.ok(&["keygen", "--seed-file", file]);
    assert!(text.contains(&format!("address    {}", first["address"].as_str().unwrap())));
}

#[test]
fn keygen_seed_flag_is_deterministic() {
    let sb = Sandbox::new();
    let a = sb.json(&["keygen", "--seed", "42"], 0);
    let b = sb.json(&["keygen", "--seed", "42"], 0);
    let c = sb.json(&["keygen", "--seed", "43"], 0);
    assert_eq!(a, b);
    assert_ne!(a["address"], c["address"]);
    assert_eq!(a["seed"].as_str().unwrap().len(), 64);
    let labeled = sb.json(&["keygen", "--label", "alice"], 0);
    assert_eq!(labeled["label"], "alice");
}

#[test]
fn genesis_refuses_to_overwrite_a_chain() {
    let sb = Sandbox::new();
    let g = sb.json(&["genesis", "--members", "7"], 0);
    assert_eq!(g["height"], 0);
    assert_eq!(g["members"], 7);
    assert_eq!(g["fault_bound"], 2);
    assert!(sb.home().join("genesis.toml").exists());
    assert_eq!(sb.code(&["genesis"]), 1);

    // a second data home reuses the written config and reproduces the block
    let other = sb.path("other.log");
    let again = sb.json(&["genesis", "--chain-path", other.to_str().unwrap()], 0);
    assert_eq!(again["hash"], g["hash"]);
}

#[test]
fn genesis_rejects_a_foreign_sealing_key() {
    let sb = Sandbox::new();
    let key = sb.path("k.txt");
    sb.ok(&["keygen", "--seed-file", key.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(sb.code(&["genesis", "--node-key", key.to_str().unwrap()]), 1);
    assert!(!sb.home().join("chain.log").exists());
}

/// Registers the development identities used by the lifecycle tests.
fn campus(sb: &Sandbox) {
    sb.ok(&["genesis"]);
    for (label, role) in [
        ("alice", "student"),
        ("bob", "student"),
        ("tina", "teacher"),
        ("eve", "evaluator"),
        ("pat", "paper_setter"),
        ("prin", "principal"),
    ] {
        let pk = format!("label:{label}");
        let code = sb.tx(
            "controller",
            &[
                "register-identity",
                "--public-key",
                &pk,
                "--role",
                role,
                "--member",
                "label:node-0",
                "--real-identity",
                label,
            ],
        );
        assert_eq!(code, 0, "registering {label}");
    }
}

#[test]
fn examination_lifecycle_through_the_cli() {
    let sb = Sandbox::new();
    campus(&sb);
    assert_eq!(sb.tx("alice", &["enroll", "--course", "CS101"]), 0);
    assert_eq!(sb.tx("bob", &["enroll", "--course", "CS101"]), 0);
    for (i, absent) in [false, false, true, false].into_iter().enumerate() {
        let session = format!("S{i}");
        let mut args = vec!["record-attendance", "--course", "CS101", "--session", &session];
        if absent {
            args.extend(["--present", "label:alice", "--absent", "label:bob"]);
        } else {
            args.extend(["--present", "label:alice,label:bob"]);
        }
        assert_eq!(sb.tx("tina", &args), 0);
    }
    let att = sb.json(&["query", "attendance", "--student", "label:bob", "--course", "CS101"], 0);
    assert_eq!((att["sessions_attended"].as_u64(), att["sessions_held"].as_u64()), (Some(3), Some(4)));
    assert_eq!(att["eligible"], true);

    let ticket = |student: &str| {
        vec![
            "issue-hall-ticket".to_string(),
            "--student".into(),
            format!("label:{student}"),
            "--exam".into(),
            "CS101-END".into(),
            "--course".into(),
            "CS101".into(),
        ]
    };
    let args: Vec<String> = ticket("alice");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(sb.tx("controller", &args), 0);
    // issuing twice is a rejected transaction, not a crash
    assert_eq!(sb.tx("controller", &args), 1);
    assert_eq!(
        sb.tx("controller", &["redeem-hall-ticket", "--student", "label:alice", "--exam", "CS101-END"]),
        0
    );
    assert_eq!(
        sb.tx("controller", &["redeem-hall-ticket", "--student", "label:alice", "--exam", "CS101-END"]),
        1
    );
    let counts = sb.json(&["query", "tickets", "--exam", "CS101-END"], 0);
    assert_eq!((counts["issued"].as_u64(), counts["redeemed"].as_u64()), (Some(1), Some(1)));

    let bank_root = "11".repeat(32);
    assert_eq!(
        sb.tx(
            "pat",
            &["commit-question-bank", "--exam", "CS101-END", "--bank-root", &bank_root, "--bank-size", "10"]
        ),
        0
    );
    assert_eq!(sb.tx("controller", &["generate-exam-paper", "--exam", "CS101-END", "--count", "4"]), 0);
    let paper = sb.json(&["query", "paper", "--exam", "CS101-END"], 0);
    assert_eq!(paper["question_ids"].as_array().unwrap().len(), 4);

    assert_eq!(
        sb.tx(
            "eve",
            &["record-grade", "--student", "label:alice", "--course", "CS101", "--exam", "CS101-END", "--grade", "AB"]
        ),
        0
    );
    let grade = sb.json(
        &["query", "grade", "--student", "label:alice", "--course", "CS101", "--exam", "CS101-END"],
        0,
    );
    assert_eq!(grade["grade"], "AB");

    let issued = sb.json(
        &["tx", "--as", "controller", "issue-certificate", "--student", "label:alice", "--program", "BSc"],
        0,
    );
    let height = issued["height"].as_u64().unwrap();
    let head = sb.json(&["query", "head"], 0);
    assert_eq!(head["height"].as_u64(), Some(height));
    assert_eq!(head["state_root"], issued["state_root"]);

    let verdict = sb.json(&["verify-chain"], 0);
    assert_eq!(verdict["status"], "valid");
    assert_eq!(verdict["replayed"], true);
    assert_eq!(verdict["height"].as_u64(), Some(height));
    assert_eq!(verdict["state_root"], head["state_root"]);
}

#[test]
fn certificates_verify_and_mutations_are_rejected() {
    let sb = Sandbox::new();
    campus(&sb);
    for (signer, args) in [
        ("bob", vec!["enroll", "--course", "CS"]),
        ("tina", vec!["record-attendance", "--course", "CS", "--session", "1", "--present", "label:bob"]),
        ("controller", vec!["issue-hall-ticket", "--student", "label:bob", "--exam", "CS-F", "--course", "CS"]),
        ("controller", vec!["redeem-hall-ticket", "--student", "label:bob", "--exam", "CS-F"]),
    ] {
        assert_eq!(sb.tx(signer, &args), 0, "{args:?}");
    }
    let graded = sb.json(
        &["tx", "--as", "eve", "record-grade", "--student", "label:bob", "--course", "CS", "--exam", "CS-F", "--grade", "BB"],
        0,
    );
    let issued = sb.json(
        &["tx", "--as", "controller", "issue-certificate", "--student", "label:bob", "--program", "BSc"],
        0,
    );
    let id = issued["certificate_id"].as_str().unwrap().to_string();
    let cert = sb.json(&["query", "certificate", "--id", &id], 0);
    let address = |label: &str| sb.json(&["keygen", "--label", label], 0)["address"].as_str().unwrap().to_string();
    assert_eq!(cert["student"], address("bob"));
    assert_eq!(cert["issuer"], address("controller"));
    // a single grade leaf is its own root
    let leaf = grade_leaf(&address("bob"), "CS", "CS-F", "BB", &address("eve"), graded["height"].as_u64().unwrap());
    assert_eq!(cert["grades_root"], leaf);
    assert_eq!(cert["issued_at_height"], issued["height"]);
    assert_eq!(certificate_id(&cert), id);

    let v = sb.json(&["verify-cert", "--id", &id], 0);
    assert_eq!(v["verdict"], "accept");

    let file = sb.path("cert.json");
    std::fs::write(&file, serde_json::to_string(&cert).unwrap()).unwrap();
    let v = sb.json(&["verify-cert", "--id", &id, "--cert", file.to_str().unwrap()], 0);
    assert_eq!(v["verdict"], "accept");

    for (field, value) in [
        ("program", Value::from("MSc")),
        ("issued_at_height", Value::from(999)),
        ("grades_root", Value::from("00".repeat(32))),
        ("student", Value::from("ab".repeat(20))),
    ] {
        let mut m = cert.clone();
        m[field] = value;
        std::fs::write(&file, serde_json::to_string(&m).unwrap()).unwrap();
        let v = sb.json(&["verify-cert", "--id", &id, "--cert", file.to_str().unwrap()], 1);
        assert_eq!(v["verdict"], "reject", "{field}");
        assert_eq!(v["reason"], "field_mismatch", "{field}");
    }
    let unknown = "42".repeat(32);
    let v = sb.json(&["verify-cert", "--id", &unknown], 1);
    assert_eq!(v["reason"], "unknown_id");

    std::fs::write(&file, "{ not json").unwrap();
    assert_eq!(sb.code(&["verify-cert", "--id", &id, "--cert", file.to_str().unwrap()]), 2);
}

/// Independent recomputation of the certificate id: SHA-256 over the
/// big-endian length-prefixed field encoding.
fn certificate_id(c: &Value) -> String {
    let field = |k: &str| c[k].as_str().unwrap().to_string();
    let mut buf = decode_hex(&field("student"));
    put_str(&mut buf, &field("program"));
    buf.extend(decode_hex(&field("grades_root")));
    buf.extend(c["issued_at_height"].as_u64().unwrap().to_be_bytes());
    buf.extend(decode_hex(&field("issuer")));
    sha256_hex(&buf)
}

fn grade_leaf(student: &str, course: &str, exam: &str, grade: &str, evaluator: &str, height: u64) -> String {
    let mut buf = decode_hex(student);
    for s in [course, exam, grade] {
        put_str(&mut buf, s);
    }
    buf.extend(decode_hex(evaluator));
    buf.extend(height.to_be_bytes());
    sha256_hex(&buf)
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u32).to_be_bytes());
    buf.extend(s.as_bytes());
}

fn decode_hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn rejected_transactions_leave_the_chain_untouched() {
    let sb = Sandbox::new();
    campus(&sb);
    let before = sb.json(&["query", "head"], 0);
    // students may not record grades
    assert_eq!(
        sb.tx(
            "alice",
            &["record-grade", "--student", "label:alice", "--course", "CS101", "--exam", "X", "--grade", "AA"]
        ),
        1
    );
    // unknown sender
    assert_eq!(sb.tx("mallory", &["enroll", "--course", "CS101"]), 1);
    // a sealing key outside the membership
    let key = sb.path("k.txt");
    sb.ok(&["keygen", "--seed-file", key.to_str().unwrap()]);
    assert_eq!(
        sb.code(&["tx", "--as", "alice", "--node-key", key.to_str().unwrap(), "enroll", "--course", "CS101"]),
        1
    );
    assert_eq!(sb.json(&["query", "head"], 0), before);
    assert_eq!(sb.json(&["verify-chain"], 0)["status"], "valid");
}

#[test]
fn verify_chain_reports_the_first_invalid_height() {
    let sb = Sandbox::new();
    campus(&sb);
    let log = sb.home().join("chain.log");
    let bytes = std::fs::read(&log).unwrap();

    // flipping a byte late in the log leaves the earlier blocks valid
    let mut bad = bytes.clone();
    let at = bytes.len() - 40;
    bad[at] ^= 0x01;
    let bad_path = sb.path("bad.log");
    std::fs::write(&bad_path, &bad).unwrap();
    let v = sb.json(&["verify-chain", bad_path.to_str().unwrap()], 1);
    assert_eq!(v["status"], "invalid");
    assert_eq!(v["first_invalid_height"], 6);
    let text = String::from_utf8(sb.run(&["verify-chain", bad_path.to_str().unwrap()]).stdout).unwrap();
    assert!(text.contains("first_invalid_height 6"), "{text}");

    let cut = sb.path("cut.log");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(sb.json(&["verify-chain", cut.to_str().unwrap()], 1)["first_invalid_height"], 6);

    std::fs::write(&cut, b"").unwrap();
    assert_eq!(sb.json(&["verify-chain", cut.to_str().unwrap()], 1)["first_invalid_height"], 0);

    assert_eq!(sb.code(&["verify-chain", sb.path("missing.log").to_str().unwrap()]), 2);
}

#[test]
fn verify_chain_replays_state_roots_when_a_config_is_present() {
    let sb = Sandbox::new();
    campus(&sb);
    // a different genesis config makes the genesis block itself disagree
    let other = sb.path("other.toml");
    let mut cfg = std::fs::read_to_string(sb.home().join("genesis.toml")).unwrap();
    cfg = cfg.replace("attendance_threshold_percent = 75", "attendance_threshold_percent = 60");
    std::fs::write(&other, cfg).unwrap();
    let v = sb.json(&["verify-chain", "--config", other.to_str().unwrap()], 1);
    assert_eq!(v["first_invalid_height"], 0);

    let v = sb.json(&["verify-chain", "--config", sb.path("none.toml").to_str().unwrap()], 0);
    assert_eq!(v["replayed"], false);
}

#[test]
fn run_scenario_reports_agreement() {
    let sb = Sandbox::new();
    let scenario = repo_root().join("scenarios/baseline.toml");
    let scenario = scenario.to_str().unwrap();
    let chain = sb.path("sim.log");
    let r = sb.json(&["run-scenario", scenario, "--chain-path", chain.to_str().unwrap()], 0);
    assert_eq!(r["divergence"], false);
    assert_eq!(r["completed"], true);
    assert_eq!(r["committed_txs"], 200);
    assert_eq!(r["seed"], 7);
    let roots: Vec<&Value> = r["replicas"].as_array().unwrap().iter().map(|x| &x["state_root"]).collect();
    assert!(roots.windows(2).all(|w| w[0] == w[1]));

    // the exported chain verifies and its height matches the run
    let v = sb.json(&["verify-chain", chain.to_str().unwrap()], 0);
    assert_eq!(v["height"], r["replicas"][0]["committed_height"]);

    let reseeded = sb.json(&["run-scenario", scenario, "--seed", "99"], 0);
    assert_eq!(reseeded["seed"], 99);
    assert_eq!(reseeded["divergence"], false);

    let text = sb.ok(&["run-scenario", scenario]);
    assert!(text.contains("divergence false"));
}

#[test]
fn run_scenario_survives_an_equivocating_leader() {
    let sb = Sandbox::new();
    let scenario = repo_root().join("scenarios/equivocating-leader.toml");
    let r = sb.json(&["run-scenario", scenario.to_str().unwrap()], 0);
    assert_eq!(r["divergence"], false);
    assert_eq!(r["completed"], true);
    assert_eq!(r["byzantine"]["0"], "equivocate");
    assert!(!r["evidence"].as_array().unwrap().is_empty());
}

#[test]
fn bad_scenarios_are_usage_errors() {
    let sb = Sandbox::new();
    let path = sb.path("bad.toml");
    std::fs::write(&path, "[replicas]\nn = 3\nf = 1\n").unwrap();
    assert_eq!(sb.code(&["run-scenario", path.to_str().unwrap()]), 2);
    std::fs::write(&path, "name = 1").unwrap();
    assert_eq!(sb.code(&["run-scenario", path.to_str().unwrap()]), 2);
    assert_eq!(sb.code(&["run-scenario", sb.path("missing.toml").to_str().unwrap()]), 2);
}

#[test]
fn report_covers_inventory_assets_and_attendance() {
    let sb = Sandbox::new();
    campus(&sb);
    assert_eq!(sb.tx("prin", &["update-inventory", "--item", "answer-booklet", "--delta", "500"]), 0);
    assert_eq!(sb.tx("prin", &["update-inventory", "--item", "answer-booklet", "--delta", "-120"]), 0);
    assert_eq!(
        sb.tx("prin", &["update-inventory", "--item", "answer-booklet", "--delta", "-1000"]),
        1,
        "stock may not go negative"
    );
    assert_eq!(sb.tx("prin", &["register-asset", "--asset", "projector-1", "--location", "store", "--at", "5"]), 0);
    for (loc, at) in [("hall-a", "9"), ("hall-b", "20")] {
        assert_eq!(
            sb.tx("prin", &["record-asset-movement", "--asset", "projector-1", "--location", loc, "--at", at]),
            0
        );
    }
    assert_eq!(sb.tx("alice", &["enroll", "--course", "MA"]), 0);
    assert_eq!(
        sb.tx("tina", &["record-attendance", "--course", "MA", "--session", "1", "--absent", "label:alice"]),
        0
    );

    let r = sb.json(&["report"], 0);
    assert_eq!(r["inventory"][0]["item_code"], "answer-booklet");
    assert_eq!(r["inventory"][0]["quantity"], 380);
    assert_eq!(r["assets"][0]["trace"].as_array().unwrap().len(), 3);
    assert_eq!(r["attendance"][0]["eligible"], false);

    let windowed = sb.json(&["report", "--from", "6", "--to", "10"], 0);
    assert_eq!(windowed["assets"][0]["trace"].as_array().unwrap().len(), 1);
    let tsv = sb.ok(&["report"]);
    assert!(tsv.contains("answer-booklet\t380"), "{tsv}");

    let q = sb.json(&["query", "inventory", "--item", "answer-booklet"], 0);
    assert_eq!(q["quantity"], 380);
    let a = sb.json(&["query", "asset", "--tag", "projector-1"], 0);
    assert_eq!(a["trace"][2]["location_id"], "hall-b");
}

#[test]
fn membership_and_devices_through_the_cli() {
    let sb = Sandbox::new();
    campus(&sb);
    assert_eq!(
        sb.tx(
            "controller",
            &["admit-member", "--kind", "autonomous_college", "--node-public-key", "label:node-4"]
        ),
        0
    );
    let m = sb.json(&["query", "members"], 0);
    assert_eq!(m["members"].as_array().unwrap().len(), 5);
    assert_eq!(
        sb.tx(
            "controller",
            &[
                "register-device",
                "--device",
                "gate-1",
                "--device-kind",
                "rfid",
                "--public-key",
                "label:gate-1",
                "--member",
                "label:node-1"
            ]
        ),
        0
    );
    assert_eq!(sb.tx("controller", &["revoke-member", "--member", "label:node-4"]), 0);
    // back at 3f + 1 members, a further revocation would break the quorum
    assert_eq!(sb.tx("controller", &["revoke-member", "--member", "label:node-3"]), 1);
}

#[test]
fn usage_errors_exit_2() {
    let sb = Sandbox::new();
    assert_eq!(sb.code(&["frobnicate"]), 2);
    assert_eq!(sb.code(&["query", "head"]), 2, "no chain yet");
    sb.ok(&["genesis"]);
    assert_eq!(sb.code(&["tx", "enroll", "--course", "X"]), 2, "no signer");
    assert_eq!(sb.code(&["tx", "--as", "alice", "record-grade", "--student", "zz"]), 2);
    assert_eq!(sb.code(&["query", "certificate", "--id", "1234"]), 2);
    assert_eq!(sb.code(&["query", "grade", "--student", "label:a", "--course", "c", "--exam", "e"]), 1);
}

#[test]
fn home_comes_from_the_flag_or_the_environment() {
    let sb = Sandbox::new();
    let flagged = sb.path("flagged");
    let out = Command::new(BIN)
        .args(["--home", flagged.to_str().unwrap(), "genesis"])
        .env_remove("EXAMCHAIN_HOME")
        .current_dir(sb.dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flagged.join("chain.log").exists());

    let out = Command::new(BIN)
        .args(["genesis"])
        .env_remove("EXAMCHAIN_HOME")
        .current_dir(sb.dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(sb.path(".examchain/chain.log").exists());
}
