use std::path::{Path, PathBuf};

use forgebot::mock::scenario::{run_file, RunOptions};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/scenarios")
}

fn scripts() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(corpus())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "scenario"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_scenario_passes() {
    let scripts = scripts();
    assert!(!scripts.is_empty());
    let failures: Vec<String> = scripts
        .iter()
        .filter_map(|path| run_file(path, RunOptions::default()).err().map(|e| format!("{}: {e}", path.display())))
        .collect();
    assert!(failures.is_empty(), "\n{}", failures.join("\n\n"));
}

#[test]
fn replaying_a_scenario_is_deterministic() {
    for path in scripts() {
        let first = run_file(&path, RunOptions::default()).unwrap();
        let second = run_file(&path, RunOptions::default()).unwrap();
        assert_eq!(first.to_json(), second.to_json(), "{}", path.display());
    }
}

#[test]
fn merge_walkthrough_matches_golden_action_sequence() {
    let transcript = run_file(&corpus().join("merge_walkthrough.scenario"), RunOptions::default()).unwrap();
    let golden = std::fs::read_to_string(corpus().join("merge_walkthrough.golden")).unwrap();
    let expected: Vec<&str> = golden.lines().filter(|l| !l.trim().is_empty()).collect();
    let actual = transcript.action_lines();
    assert_eq!(actual, expected, "\nactual transcript:\n{}", actual.join("\n"));
}

#[test]
fn failed_expectation_reports_a_diff() {
    use forgebot::mock::scenario::{run_scenario, Script};
    let text = "scenario v1\nconfig coq.toml\nseed coq.json\nact open-pr github:coq/coq 101 bob feat\nexpect-action PushBranch count=2\n";
    let e = run_scenario(&Script::parse(text, corpus()).unwrap(), RunOptions::default()).unwrap_err();
    assert_eq!(e.line, 5);
    assert!(e.message.contains("exactly 2"), "{e}");
    let diff = e.diff.unwrap();
    assert!(diff.contains("PushBranch") && diff.contains("pr-101"), "{diff}");

    let text = "scenario v1\nconfig coq.toml\nseed coq.json\nact open-pr github:coq/coq 101 bob feat\nexpect-state label github:coq/coq 101 \"needs: rebase\" present\n";
    let e = run_scenario(&Script::parse(text, corpus()).unwrap(), RunOptions::default()).unwrap_err();
    assert!(e.diff.unwrap().contains("observed"));
}

#[test]
fn duplicate_delivery_leaves_every_scenario_unchanged() {
    for path in scripts() {
        let once = run_file(&path, RunOptions::default()).unwrap();
        let twice = run_file(&path, RunOptions { duplicate_deliveries: true }).unwrap();
        assert_eq!(once, twice, "{}", path.display());
    }
}
