use std::path::Path;
use std::process::Command;

use serde_json::Value;

use teduchain_core::ledger::make_genesis;

const BIN: &str = env!("CARGO_BIN_EXE_teduchain");

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn simulated(dir: &Path) -> String {
    let out = dir.join("out");
    let (code, stdout, _) = run(&[
        "sim",
        "--scenario",
        &scenario("single_student.json"),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}");
    assert!(out.join("report.json").exists());
    assert!(out.join("ledger.F2.jsonl").exists());
    out.join("ledger.F1.jsonl").to_string_lossy().into_owned()
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = simulated(dir.path());
    let (code, stdout, _) = run(&["verify", "--ledger", &ledger]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("valid"));

    let mut bytes = std::fs::read(&ledger).unwrap();
    let second_line = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    let at = second_line + 40;
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, bytes).unwrap();
    let (code, stdout, _) = run(&["verify", "--ledger", tampered.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stdout.contains("first_bad_index=1"), "{stdout}");

    let (code, _, stderr) = run(&["verify", "--ledger", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.starts_with("error:"));
}

#[test]
fn inspect_prints_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = simulated(dir.path());
    let (code, stdout, _) = run(&["inspect", "--ledger", &ledger, "--index", "0"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.trim_end(), make_genesis().to_line());

    let (code, stdout, _) = run(&["inspect", "--ledger", &ledger, "--index", "1"]);
    assert_eq!(code, 0);
    let block: Value = serde_json::from_str(&stdout).unwrap();
    let terms = &block["payload"]["terms"];
    let shares: u64 = terms["shares"].as_array().unwrap().iter().map(|s| s["amount"].as_u64().unwrap()).sum();
    assert_eq!(shares, terms["program_cost"].as_u64().unwrap());
    assert_eq!(shares, 100_000);

    let (code, _, stderr) = run(&["inspect", "--ledger", &ledger, "--index", "2"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("out of range"), "{stderr}");

    let (code, _, _) = run(&["inspect", "--ledger", "/nonexistent/ledger.jsonl", "--index", "0"]);
    assert_eq!(code, 2);
}

#[test]
fn sim_reports_bad_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("single_student.json"))
        .unwrap()
        .replace("\"type\": \"verify\"", "\"type\": \"teleport\"");
    std::fs::write(&bad, text).unwrap();
    let (code, _, stderr) = run(&["sim", "--scenario", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("teleport"), "{stderr}");
    assert!(stderr.contains("line 15"), "{stderr}");
}

#[test]
fn generate_then_sim() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("g.json");
    let (code, _, _) = run(&["generate", "--seed", "5", "--nodes", "4", "--out", file.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (code, stdout, _) = run(&["sim", "--scenario", file.to_str().unwrap(), "--seed", "1", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.starts_with("nodes=4 "), "{stdout}");
}
