//! Exit codes and surface behaviors of the `vlog` binary.

use std::path::{Path, PathBuf};
use std::process::Output;

use vaultlog_core::policy::PolicyNode;
use vaultlog_core::store::Store;

fn vlog(site: &Path) -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_vlog"));
    cmd.arg("--site").arg(site);
    cmd
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn expect_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A site with a key, one device, and three logged events.
fn seeded_site(root: &Path) -> PathBuf {
    let site = root.join("site");
    let policy = root.join("policy");
    let node = PolicyNode::group("operators", 2, &["ada", "grace", "edsger"]);
    std::fs::write(&policy, node.to_canonical_bytes()).unwrap();
    ok(&vlog(&site).arg("init").output().unwrap());
    ok(&vlog(&site)
        .args(["keygen", "--policy"])
        .arg(&policy)
        .arg("--out")
        .arg(root.join("shares"))
        .args(["--seed", "k"])
        .output()
        .unwrap());
    ok(&vlog(&site)
        .args(["register-device", "dev-1"])
        .output()
        .unwrap());
    for i in 0..3 {
        ok(&vlog(&site)
            .args([
                "log", "--device", "dev-1", "--user", "u", "--action", "login",
            ])
            .args([
                "--timestamp",
                &(100 + i).to_string(),
                "--seed",
                &format!("s{i}"),
            ])
            .output()
            .unwrap());
    }
    site
}

#[test]
fn help_and_version_exit_zero() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_vlog"))
        .arg("--help")
        .output()
        .unwrap();
    expect_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("vlog"));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_vlog"))
        .arg("--version")
        .output()
        .unwrap();
    expect_code(&out, 0);
}

#[test]
fn unknown_command_is_a_usage_error() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_vlog"))
        .arg("frobnicate")
        .output()
        .unwrap();
    expect_code(&out, 1);
}

#[test]
fn commands_against_a_missing_site_are_usage_errors() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = dir.path().join("nowhere");
    expect_code(&vlog(&site).arg("verify").output().unwrap(), 1);
    expect_code(
        &vlog(&site)
            .args(["log", "--device", "d", "--user", "u", "--action", "login"])
            .output()
            .unwrap(),
        1,
    );
}

#[test]
fn init_refuses_an_existing_site() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = dir.path().join("site");
    ok(&vlog(&site).arg("init").output().unwrap());
    expect_code(&vlog(&site).arg("init").output().unwrap(), 1);
}

#[test]
fn logging_from_an_unregistered_device_is_refused() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    expect_code(
        &vlog(&site)
            .args([
                "log", "--device", "ghost", "--user", "u", "--action", "login",
            ])
            .output()
            .unwrap(),
        1,
    );
}

#[test]
fn verify_reports_tampering_with_exit_two() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    assert!(ok(&vlog(&site).arg("verify").output().unwrap()).starts_with("intact: 3 entries"));

    let store_path = site.join("store.vlst");
    let mut bytes = std::fs::read(&store_path).unwrap();
    let at = bytes.len() - 40; // inside the last frame's payload/tag
    bytes[at] ^= 0x01;
    std::fs::write(&store_path, &bytes).unwrap();

    let out = vlog(&site).arg("verify").output().unwrap();
    expect_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("TAMPERED"));
}

#[test]
fn export_binary_is_the_store_file() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    let out = vlog(&site)
        .args(["export", "--format", "binary"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(out.stdout, std::fs::read(site.join("store.vlst")).unwrap());

    let text = ok(&vlog(&site)
        .args(["export", "--format", "text"])
        .output()
        .unwrap());
    assert!(text.starts_with("entries=3\nhead="), "got: {text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("seq=")).count(), 3);
    assert_eq!(text.matches("kind=event").count(), 3);
}

#[test]
fn anchoring_detects_a_rolled_back_store() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    let head = ok(&vlog(&site).args(["head", "--anchor"]).output().unwrap());
    assert!(head.starts_with("count=3 head="), "got: {head}");
    assert!(site.join("heads").join("anchors").exists());

    // Re-anchoring the same head is fine.
    ok(&vlog(&site).args(["head", "--anchor"]).output().unwrap());

    // Roll the store back to its first entry and try again.
    let store_path = site.join("store.vlst");
    let first_len = Store::open_read_only(&store_path)
        .unwrap()
        .read(0)
        .unwrap()
        .payload
        .len() as u64;
    let file = std::fs::OpenOptions::new()
        .write(true)
        .open(&store_path)
        .unwrap();
    file.set_len(5 + 56 + first_len + 32).unwrap();
    drop(file);

    expect_code(&vlog(&site).args(["head", "--anchor"]).output().unwrap(), 2);
}

#[test]
fn decrypt_before_any_ceremony_is_a_policy_error() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    let out = vlog(&site)
        .args(["decrypt", "--from", "0", "--to", "2"])
        .output()
        .unwrap();
    expect_code(&out, 4);
    assert!(out.stdout.is_empty());
}

#[test]
fn submitting_without_an_open_ceremony_is_refused() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    let share = dir.path().join("shares").join("ada.share");
    let out = vlog(&site)
        .args(["ceremony", "submit", "--share"])
        .arg(share)
        .output()
        .unwrap();
    expect_code(&out, 1);
}

#[test]
fn decrypt_out_writes_a_file_and_warns() {
    let dir = tempfile::TempDir::new().unwrap();
    let site = seeded_site(dir.path());
    ok(&vlog(&site).args(["ceremony", "open"]).output().unwrap());
    for member in ["ada", "grace"] {
        ok(&vlog(&site)
            .args(["ceremony", "submit", "--share"])
            .arg(dir.path().join("shares").join(format!("{member}.share")))
            .output()
            .unwrap());
    }
    ok(&vlog(&site)
        .args(["ceremony", "finish", "--seed", "f"])
        .output()
        .unwrap());

    let out_file = dir.path().join("plain.txt");
    let out = vlog(&site)
        .args([
            "decrypt", "--from", "0", "--to", "2", "--seed", "d", "--out",
        ])
        .arg(&out_file)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        out.stdout.is_empty(),
        "plaintext must go to the file, not stdout"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let written = std::fs::read_to_string(&out_file).unwrap();
    assert_eq!(written.lines().count(), 3);
    assert!(written.contains("device=dev-1"));
}
