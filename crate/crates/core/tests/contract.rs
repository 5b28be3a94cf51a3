//! The forge contract suite, run against the mock and against the live
//! adapter replaying hand-written GitHub and GitLab responses.

use std::path::Path;
use std::sync::Arc;

use forgebot::client::contract::{run_contract, ContractCheck, ContractFixture};
use forgebot::client::live::{LiveForge, LiveSettings, ReplayTransport};
use forgebot::client::{ActionStatus, ForgePort, ForgeReads, RetryPolicy};
use forgebot::mock::seed::Seed;
use forgebot::mock::MockForge;
use forgebot::model::{Action, RepoId, Sha};

fn seed() -> Seed {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/contract_seed.json");
    Seed::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fixture(push_sha: Sha) -> ContractFixture {
    ContractFixture {
        repo: RepoId::github("coq", "coq"),
        labeled_pr: 7,
        milestone_pr: 8,
        absent_pr: 999,
        org: "coq".into(),
        team: "maintainers".into(),
        member: "alice".into(),
        non_member: "mallory".into(),
        unknown_team: "ghosts".into(),
        unlabeled_pr: 9,
        new_label: "needs: squashing".into(),
        conflicted_pr: 10,
        mirror: RepoId::gitlab("coq", "coq"),
        push_branch: "contract-push".into(),
        push_sha,
    }
}

fn assert_all_pass(subject: &str, checks: &[ContractCheck]) {
    assert_eq!(checks.len(), 10, "{subject}: unexpected number of checks");
    let failed: Vec<String> =
        checks.iter().filter(|c| !c.passed).map(|c| format!("{subject}: {} ({})", c.name, c.detail)).collect();
    assert!(failed.is_empty(), "\n{}", failed.join("\n"));
}

#[test]
fn mock_satisfies_contract() {
    let state = seed().build().unwrap();
    let push_sha = state.resolve("feat").unwrap();
    let forge = MockForge::new(state);
    assert_all_pass("mock", &run_contract(&forge, &fixture(push_sha)));
}

#[test]
fn live_adapter_satisfies_contract_over_replay() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/live_contract.json");
    let transport = Arc::new(ReplayTransport::from_json(&std::fs::read_to_string(path).unwrap()).unwrap());
    let forge = LiveForge::new(LiveSettings::default(), transport.clone()).with_retry(RetryPolicy::default(), Arc::new(|_| {}));
    let push_sha = Sha::parse("3333333333333333333333333333333333333333").unwrap();
    assert_all_pass("live", &run_contract(&forge, &fixture(push_sha)));
    assert!(transport.unused().is_empty(), "fixture has unused exchanges: {:#?}", transport.unused());
}

#[test]
fn mock_reads_its_own_writes_and_repeats_are_noops() {
    let state = seed().build().unwrap();
    let forge = MockForge::new(state);
    let repo = RepoId::github("coq", "coq");
    let actions = [
        Action::AddLabel { repo: repo.clone(), number: 9, label: "needs: fixing".into() },
        Action::RemoveLabel { repo: repo.clone(), number: 7, label: "needs: rebase".into() },
        Action::MergePr { repo: repo.clone(), number: 9, message: "Merge PR #9: Plain".into(), signed: true },
    ];
    for action in &actions {
        assert_eq!(forge.apply(action).status, ActionStatus::Applied, "{action:?}");
        let digest = forge.digest();
        assert_eq!(forge.apply(action).status, ActionStatus::Noop, "{action:?}");
        assert_eq!(forge.digest(), digest, "repeat of {action:?} changed state");
    }
    let snapshot = forge.get_pr_snapshot(&repo, 7).unwrap();
    assert!(!snapshot.has_label("needs: rebase"));
}
