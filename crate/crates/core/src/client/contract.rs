//! Operation contracts every [`ForgePort`] must honour, runnable against any
//! implementation: the mock forge, or the live adapter over recorded traffic.

use serde::{Deserialize, Serialize};

use super::{ActionStatus, ForgeError, ForgePort};
use crate::model::{Action, LabelCategory, RepoId, Sha};

/// Names of the forge objects the contract checks exercise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractFixture {
    pub repo: RepoId,
    /// PR carrying a needs-label.
    pub labeled_pr: u64,
    /// PR with a milestone set.
    pub milestone_pr: u64,
    pub absent_pr: u64,
    pub org: String,
    pub team: String,
    pub member: String,
    pub non_member: String,
    pub unknown_team: String,
    /// PR that does not carry `new_label` yet.
    pub unlabeled_pr: u64,
    pub new_label: String,
    /// Open PR whose head conflicts with its base.
    pub conflicted_pr: u64,
    pub mirror: RepoId,
    pub push_branch: String,
    /// Commit already known to the mirror.
    pub push_sha: Sha,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContractCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(), String>) -> ContractCheck {
    match outcome {
        Ok(()) => ContractCheck { name, passed: true, detail: String::new() },
        Err(detail) => ContractCheck { name, passed: false, detail },
    }
}

fn ensure(cond: bool, detail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail())
    }
}

/// Runs every contract check in a fixed order. Mutating checks run last and
/// leave the subject changed.
pub fn run_contract(forge: &dyn ForgePort, fx: &ContractFixture) -> Vec<ContractCheck> {
    let mut out = Vec::new();

    out.push(check(
        "snapshot_reports_needs_label",
        forge
            .get_pr_snapshot(&fx.repo, fx.labeled_pr)
            .map_err(|e| e.to_string())
            .and_then(|s| ensure(s.has_category(LabelCategory::Needs), || format!("labels: {:?}", s.labels))),
    ));

    out.push(check(
        "snapshot_reports_milestone",
        forge
            .get_pr_snapshot(&fx.repo, fx.milestone_pr)
            .map_err(|e| e.to_string())
            .and_then(|s| ensure(s.milestone.is_some(), || "milestone missing".into())),
    ));

    out.push(check("absent_pr_is_not_found", match forge.get_pr_snapshot(&fx.repo, fx.absent_pr) {
        Err(ForgeError::NotFound(_)) => Ok(()),
        other => Err(format!("expected not-found, got {other:?}")),
    }));

    out.push(check("team_member_is_member", match forge.is_team_member(&fx.org, &fx.team, &fx.member) {
        Ok(true) => Ok(()),
        other => Err(format!("expected Ok(true), got {other:?}")),
    }));

    out.push(check("non_member_is_not_member", match forge.is_team_member(&fx.org, &fx.team, &fx.non_member) {
        Ok(false) => Ok(()),
        other => Err(format!("expected Ok(false), got {other:?}")),
    }));

    out.push(check("unknown_team_is_config_error", match forge.is_team_member(&fx.org, &fx.unknown_team, &fx.member) {
        Err(ForgeError::Config(_)) => Ok(()),
        other => Err(format!("expected a configuration error, got {other:?}")),
    }));

    let add = Action::AddLabel { repo: fx.repo.clone(), number: fx.unlabeled_pr, label: fx.new_label.clone() };
    let first = forge.apply(&add);
    let second = forge.apply(&add);
    out.push(check(
        "add_label_applied_then_noop",
        ensure(first.status == ActionStatus::Applied && second.status == ActionStatus::Noop, || {
            format!("got {first:?} then {second:?}")
        }),
    ));

    out.push(check(
        "snapshot_reads_own_label_write",
        forge
            .get_pr_snapshot(&fx.repo, fx.unlabeled_pr)
            .map_err(|e| e.to_string())
            .and_then(|s| ensure(s.has_label(&fx.new_label), || format!("labels: {:?}", s.labels))),
    ));

    let merge = forge.apply(&Action::MergePr {
        repo: fx.repo.clone(),
        number: fx.conflicted_pr,
        message: "Merge conflicted PR".into(),
        signed: true,
    });
    out.push(check(
        "merge_of_conflicted_pr_fails",
        ensure(merge.status == ActionStatus::Failed && merge.detail.contains("not mergeable"), || {
            format!("got {merge:?}")
        }),
    ));

    let push = Action::PushBranch {
        repo: fx.mirror.clone(),
        branch: fx.push_branch.clone(),
        source: fx.push_sha.clone(),
        force: true,
        objects: Vec::new(),
    };
    let pushed = forge.apply(&push);
    out.push(check(
        "forced_push_reads_back",
        ensure(pushed.status == ActionStatus::Applied, || format!("push returned {pushed:?}")).and_then(|()| {
            match forge.branch_head(&fx.mirror, &fx.push_branch) {
                Ok(Some(head)) if head == fx.push_sha => Ok(()),
                other => Err(format!("branch head after push: {other:?}")),
            }
        }),
    ));

    out
}
