//! Invariants of the mock forge's transition function over random action
//! sequences.

use forgebot::client::{ActionStatus, ForgeReads};
use forgebot::mock::seed::Seed;
use forgebot::mock::ForgeState;
use forgebot::model::{Action, CheckConclusion, RepoId, StatusState};
use proptest::prelude::*;

const SEED: &str = r#"{
    "now": "2021-01-01T00:00:00Z",
    "commits": [
        {"alias": "root", "files": ["README"]},
        {"alias": "trunk", "parents": ["root"], "files": ["kernel/term.ml"]},
        {"alias": "feat", "parents": ["root"], "files": ["tactics/ltac.ml"]},
        {"alias": "clash", "parents": ["root"], "files": ["kernel/term.ml"]}
    ],
    "repos": [
        {
            "repo": "github:coq/coq",
            "branches": {"master": "trunk"},
            "milestones": [{"number": 1, "title": "8.13"}, {"number": 2, "title": "8.14"}],
            "boards": {"Backport": ["Requested", "Shipped"]},
            "prs": [
                {"number": 1, "title": "One", "author": "bob", "head": "feat"},
                {"number": 2, "title": "Two", "author": "bob", "head": "clash", "labels": ["needs: rebase"]}
            ]
        },
        {"repo": "gitlab:coq/coq", "branches": {"master": "root"}}
    ]
}"#;

fn base() -> ForgeState {
    Seed::parse(SEED).unwrap().build().unwrap()
}

fn action() -> impl Strategy<Value = Action> {
    let gh = RepoId::github("coq", "coq");
    let gl = RepoId::gitlab("coq", "coq");
    let state = base();
    let shas = ["root", "trunk", "feat", "clash"].map(|a| state.resolve(a).unwrap()).to_vec();
    let number = 1u64..=2;
    let label = prop::sample::select(vec!["needs: rebase", "needs: fixing", "kind: fix"]);
    let sha = prop::sample::select(shas);
    let column = prop::sample::select(vec!["Requested", "Shipped"]);
    prop_oneof![
        (number.clone(), label.clone()).prop_map({
            let gh = gh.clone();
            move |(number, label)| Action::AddLabel { repo: gh.clone(), number, label: label.into() }
        }),
        (number.clone(), label).prop_map({
            let gh = gh.clone();
            move |(number, label)| Action::RemoveLabel { repo: gh.clone(), number, label: label.into() }
        }),
        (number.clone(), prop::sample::select(vec!["hello", "@bob: please rebase"])).prop_map({
            let gh = gh.clone();
            move |(number, body)| Action::PostComment { repo: gh.clone(), number, body: body.into() }
        }),
        number.clone().prop_map({
            let gh = gh.clone();
            move |number| Action::ClosePr { repo: gh.clone(), number }
        }),
        (number.clone(), 1u64..=2).prop_map({
            let gh = gh.clone();
            move |(number, milestone)| Action::SetMilestone { repo: gh.clone(), number, milestone }
        }),
        number.clone().prop_map({
            let gh = gh.clone();
            move |number| Action::MergePr { repo: gh.clone(), number, message: format!("Merge PR #{number}"), signed: true }
        }),
        (sha.clone(), prop::sample::select(vec!["pr-1", "staging"])).prop_map({
            let gl = gl.clone();
            move |(source, branch)| Action::PushBranch {
                repo: gl.clone(),
                branch: branch.into(),
                source,
                force: true,
                objects: Vec::new(),
            }
        }),
        prop::sample::select(vec!["pr-1", "staging"]).prop_map({
            let gl = gl.clone();
            move |branch| Action::DeleteBranch { repo: gl.clone(), branch: branch.into() }
        }),
        (sha.clone(), any::<bool>()).prop_map({
            let gh = gh.clone();
            move |(head_sha, ok)| Action::CreateCheckRun {
                repo: gh.clone(),
                head_sha,
                name: "GitLab CI".into(),
                conclusion: if ok { CheckConclusion::Success } else { CheckConclusion::Failure },
                summary: "summary".into(),
                details_url: None,
                links: Vec::new(),
            }
        }),
        (sha, any::<bool>()).prop_map({
            let gh = gh.clone();
            move |(sha, ok)| Action::SetCommitStatus {
                repo: gh.clone(),
                sha,
                context: "ci".into(),
                state: if ok { StatusState::Success } else { StatusState::Failure },
                description: String::new(),
                target_url: None,
            }
        }),
        (number.clone(), column.clone()).prop_map({
            let gh = gh.clone();
            move |(pr_number, column)| Action::AddCardToColumn {
                repo: gh.clone(),
                board: "Backport".into(),
                column: column.into(),
                pr_number,
            }
        }),
        (number, column).prop_map({
            let gh = gh.clone();
            move |(pr_number, column)| Action::MoveCard { repo: gh.clone(), board: "Backport".into(), pr_number, column: column.into() }
        }),
        prop::sample::select(vec!["t1", "t2"]).prop_map(move |token| Action::DispatchJob {
            repo: gl.clone(),
            token: token.into(),
            script: "coqc bug.v".into(),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// `step` never touches its input, and `apply` agrees with it.
    #[test]
    fn step_is_pure(actions in prop::collection::vec(action(), 0..25)) {
        let mut state = base();
        for a in &actions {
            let before = state.digest();
            let (next, result) = state.step(a);
            prop_assert_eq!(state.digest(), before);
            let mut applied = state.clone();
            let applied_result = applied.apply(a);
            prop_assert_eq!(applied_result, result);
            prop_assert_eq!(applied.digest(), next.digest());
            state = next;
        }
    }

    /// Repeating any action right after itself is a NOOP that changes nothing.
    #[test]
    fn repeated_actions_are_noops(actions in prop::collection::vec(action(), 1..25)) {
        let mut state = base();
        for a in &actions {
            let (once, first) = state.step(a);
            let (twice, second) = once.step(a);
            if first.status != ActionStatus::Failed {
                prop_assert_eq!(second.status, ActionStatus::Noop, "{:?} then {:?} for {:?}", first, second, a);
                prop_assert_eq!(twice.digest(), once.digest(), "{:?}", a);
            }
            state = once;
        }
    }

    /// A NOOP or FAILED result leaves the state unchanged and announces nothing.
    #[test]
    fn unsuccessful_actions_change_nothing(actions in prop::collection::vec(action(), 1..25)) {
        let mut state = base();
        for a in &actions {
            let (next, result) = state.step(a);
            if result.status != ActionStatus::Applied {
                prop_assert_eq!(next.digest(), state.digest(), "{:?} -> {:?}", a, result);
                prop_assert_eq!(next.outbox.len(), state.outbox.len());
            }
            state = next;
        }
    }

    /// Label writes are visible to the next snapshot.
    #[test]
    fn label_writes_are_read_back(actions in prop::collection::vec(action(), 1..25)) {
        let mut state = base();
        let repo = RepoId::github("coq", "coq");
        for a in &actions {
            let result = state.apply(a);
            match a {
                Action::AddLabel { number, label, .. } if result.status != ActionStatus::Failed => {
                    prop_assert!(state.get_pr_snapshot(&repo, *number).unwrap().has_label(label));
                }
                Action::RemoveLabel { number, label, .. } if result.status != ActionStatus::Failed => {
                    prop_assert!(!state.get_pr_snapshot(&repo, *number).unwrap().has_label(label));
                }
                _ => {}
            }
        }
    }
}
