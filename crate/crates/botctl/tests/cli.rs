//! The `bot` binary's offline subcommands.

use std::path::Path;
use std::process::{Command, Output};

use forgebot::Config;

fn bot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bot"))
        .args(args)
        .env_remove("BOT_WEBHOOK_SECRET")
        .output()
        .expect("run bot")
}

fn corpus(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/scenarios").join(file).display().to_string()
}

#[test]
fn check_config_prints_a_reloadable_effective_config() {
    let out = bot(&["check-config", "--config", &corpus("coq.toml")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains("ledger_capacity"), "defaults should be filled in:\n{printed}");
    let reparsed = Config::from_toml(&printed, "stdout").unwrap();
    assert_eq!(reparsed, Config::load(Path::new(&corpus("coq.toml"))).unwrap());
}

#[test]
fn check_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "bot_handle = \"\"\nlisten = \"nowhere\"\nledger_capacity = 0\n\n[secrets]\nwebhook_secret_env = \"hunter2-literal\"\n",
    )
    .unwrap();
    let out = bot(&["check-config", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    for needle in ["bot_handle", "listen", "ledger_capacity", "webhook_secret_env"] {
        assert!(stderr.contains(needle), "missing {needle} in:\n{stderr}");
    }
}

#[test]
fn serve_requires_the_webhook_secret() {
    let out = bot(&["serve", "--config", &corpus("coq.toml"), "--listen", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BOT_WEBHOOK_SECRET"));
}

#[test]
fn replay_prints_actions_and_matches_duplicates() {
    let scenario = corpus("merge_walkthrough.scenario");
    let plain = bot(&["replay", &scenario]);
    assert!(plain.status.success(), "{}", String::from_utf8_lossy(&plain.stderr));
    let doubled = bot(&["replay", &scenario, "--duplicate-deliveries"]);
    assert!(doubled.status.success(), "{}", String::from_utf8_lossy(&doubled.stderr));
    assert!(!plain.stdout.is_empty());
    assert_eq!(plain.stdout, doubled.stdout);

    let json = bot(&["replay", &scenario, "--json"]);
    assert!(json.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&json.stdout).expect("valid JSON transcript");
    assert!(parsed.is_object() || parsed.is_array());
}

#[test]
fn replay_failure_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.scenario");
    let out = bot(&["replay", path.to_str().unwrap()]);
    assert!(!out.status.success());
}
