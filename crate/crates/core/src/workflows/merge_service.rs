//! Merge on command: `@<bot> merge now` in a PR comment, checked against the
//! repository's merge policy with every violation reported at once.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::ActionResult;
use crate::config::{render_template, MergePolicy};
use crate::engine::{Context, Workflow, WorkflowError};
use crate::model::{Action, CiVerdict, Event, EventKind, EventPayload, LabelCategory, Mergeability, PrSnapshot, PrState};

pub const NAME: &str = "merge_service";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NotMaintainer,
    HasNeedsLabel,
    NoKindLabel,
    NoMilestone,
    NoAssignee,
    InsufficientReviews,
    ChangesRequested,
    WrongBase,
    CiNotGreen,
    Conflict,
    SelfMerge,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_value(self).expect("code serializes");
        f.write_str(text.as_str().expect("code is a string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

fn find_command_line<'a>(body: &'a str, bot_handle: &str, verb: &str) -> Option<&'a str> {
    let mention = format!("@{bot_handle}");
    body.lines().map(str::trim).find(|line| {
        line.strip_prefix(&mention)
            .filter(|rest| rest.starts_with(char::is_whitespace))
            .is_some_and(|rest| rest.split_whitespace().collect::<Vec<_>>().join(" ").eq_ignore_ascii_case(verb))
    })
}

/// True iff some line is exactly `@<handle> merge now` (verb case-insensitive).
pub fn parse_merge_command(comment_body: &str, bot_handle: &str) -> bool {
    find_command_line(comment_body, bot_handle, "merge now").is_some()
}

fn command_hash(body: &str, bot_handle: &str) -> Option<String> {
    let line = find_command_line(body, bot_handle, "merge now")?;
    let normalized = line.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    Some(hex::encode(&Sha256::digest(normalized.as_bytes())[..8]))
}

/// Every violated criterion, in code order.
pub fn evaluate_policy(snapshot: &PrSnapshot, commenter: &str, membership: bool, policy: &MergePolicy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, detail: String| out.push(Violation { code, detail });
    if !membership {
        push(
            ViolationCode::NotMaintainer,
            format!("@{commenter} is not a member of the {} team", policy.authorized_team),
        );
    }
    if policy.forbid_needs_labels {
        let needs: Vec<&str> =
            snapshot.labels.iter().filter(|l| l.category == LabelCategory::Needs).map(|l| l.name.as_str()).collect();
        if !needs.is_empty() {
            push(ViolationCode::HasNeedsLabel, format!("the PR still has blocking labels: {}", needs.join(", ")));
        }
    }
    if policy.require_kind_label && !snapshot.has_category(LabelCategory::Kind) {
        push(ViolationCode::NoKindLabel, "the PR has no `kind:` label".into());
    }
    if policy.require_milestone && snapshot.milestone.is_none() {
        push(ViolationCode::NoMilestone, "no milestone is set".into());
    }
    if policy.require_assignee && snapshot.assignees.is_empty() {
        push(ViolationCode::NoAssignee, "no assignee is set".into());
    }
    if snapshot.approved_reviews < policy.min_approvals {
        push(
            ViolationCode::InsufficientReviews,
            format!("{} approving review(s), {} required", snapshot.approved_reviews, policy.min_approvals),
        );
    }
    if policy.forbid_changes_requested && snapshot.changes_requested_reviews > 0 {
        push(
            ViolationCode::ChangesRequested,
            format!("{} review(s) request changes", snapshot.changes_requested_reviews),
        );
    }
    if !policy.allowed_base_branches.is_empty() && !policy.allowed_base_branches.contains(&snapshot.base.branch) {
        push(
            ViolationCode::WrongBase,
            format!(
                "the target branch {} is not one of {}",
                snapshot.base.branch,
                policy.allowed_base_branches.join(", ")
            ),
        );
    }
    if policy.require_ci_success && snapshot.ci_verdict != CiVerdict::Success {
        let verdict = serde_json::to_value(snapshot.ci_verdict).expect("verdict serializes");
        push(ViolationCode::CiNotGreen, format!("CI is not green (status: {})", verdict.as_str().unwrap_or("?")));
    }
    if snapshot.mergeable == Mergeability::Conflicting {
        push(ViolationCode::Conflict, "the PR has merge conflicts with its target branch".into());
    }
    if policy.forbid_self_merge && commenter == snapshot.author {
        push(ViolationCode::SelfMerge, "maintainers may not merge their own PRs".into());
    }
    out
}

/// The signed merge with the templated commit message.
pub fn execute(repo: &crate::model::RepoId, snapshot: &PrSnapshot, template: &str) -> Vec<Action> {
    let message = render_template(
        template,
        &[("number", snapshot.number.to_string()), ("title", snapshot.title.clone())],
        &[("assignee", snapshot.assignees.iter().cloned().collect())],
    );
    vec![Action::MergePr { repo: repo.clone(), number: snapshot.number, message, signed: true }]
}

pub fn violation_report(commenter: &str, violations: &[Violation]) -> String {
    let mut body = format!("@{commenter}: I cannot merge this PR yet:\n");
    for v in violations {
        body.push_str(&format!("\n- **{}**: {}", v.code, v.detail));
    }
    body
}

#[derive(Default)]
pub struct MergeService {
    /// (comment id, command hash) pairs already acted upon.
    handled: BTreeSet<(u64, String)>,
    /// Who asked for each merge in flight, by PR number.
    requested_by: std::collections::BTreeMap<u64, String>,
}

impl MergeService {
    pub fn new() -> Self {
        Self::default()
    }

    fn on_comment(&mut self, ctx: &Context<'_>, number: u64, comment_id: u64, author: &str, body: &str) -> Result<Vec<Action>, WorkflowError> {
        let repo = ctx.source();
        if author == ctx.bot() {
            return Ok(Vec::new());
        }
        let Some(hash) = command_hash(body, ctx.bot()) else {
            return Ok(Vec::new());
        };
        if !self.handled.insert((comment_id, hash)) {
            ctx.note(format!("comment {comment_id} already handled for this command"));
            return Ok(Vec::new());
        }
        let snapshot = ctx.forge.get_pr_snapshot(&repo, number)?;
        match snapshot.state {
            PrState::Merged => {
                return Ok(vec![Action::PostComment {
                    repo,
                    number,
                    body: format!("@{author}: this PR is already merged."),
                }])
            }
            PrState::Closed => {
                return Ok(vec![Action::PostComment {
                    repo,
                    number,
                    body: format!("@{author}: this PR is closed; reopen it before merging."),
                }])
            }
            PrState::Open => {}
        }
        let (org, team) = ctx.repo.authorized_team();
        let member = ctx.forge.is_team_member(&org, &team, author)?;
        let violations = evaluate_policy(&snapshot, author, member, &ctx.repo.merge);
        if violations.is_empty() {
            ctx.note(format!("policy satisfied for PR #{number}"));
            self.requested_by.insert(number, author.to_owned());
            Ok(execute(&repo, &snapshot, &ctx.repo.templates.merge_commit))
        } else {
            let codes: Vec<String> = violations.iter().map(|v| v.code.to_string()).collect();
            ctx.note(format!("policy violations: {}", codes.join(", ")));
            Ok(vec![Action::PostComment { repo, number, body: violation_report(author, &violations) }])
        }
    }
}

impl Workflow for MergeService {
    fn name(&self) -> &'static str {
        NAME
    }

    fn subscribes(&self, kind: EventKind) -> bool {
        matches!(kind, EventKind::CommentPosted | EventKind::CommentEdited)
    }

    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError> {
        if event.repo != ctx.source() {
            return Ok(Vec::new());
        }
        match &event.payload {
            EventPayload::CommentPosted { number, comment_id, author, body, on_pr: true }
            | EventPayload::CommentEdited { number, comment_id, author, body, on_pr: true } => {
                self.on_comment(ctx, *number, *comment_id, author, body)
            }
            _ => Ok(Vec::new()),
        }
    }

    fn after_apply(&mut self, _ctx: &Context<'_>, action: &Action, result: &ActionResult) -> Vec<Action> {
        let Action::MergePr { repo, number, .. } = action else {
            return Vec::new();
        };
        let requester = self.requested_by.remove(number);
        if !result.is_failed() {
            return Vec::new();
        }
        let mention = requester.map(|r| format!("@{r}: ")).unwrap_or_default();
        vec![Action::PostComment {
            repo: repo.clone(),
            number: *number,
            body: format!("{mention}the merge failed: {}", result.detail),
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_must_be_a_standalone_line() {
        assert!(parse_merge_command("@coqbot merge now", "coqbot"));
        assert!(parse_merge_command("LGTM\n  @coqbot Merge Now  \nthanks", "coqbot"));
        assert!(!parse_merge_command("please @coqbot merge now ok?", "coqbot"));
        assert!(!parse_merge_command("@otherbot merge now", "coqbot"));
        assert!(!parse_merge_command("@coqbot merge nwo", "coqbot"));
        assert!(!parse_merge_command("@CoqBot merge now", "coqbot"));
        assert!(!parse_merge_command("@coqbotmerge now", "coqbot"));
    }

    #[test]
    fn violation_codes_render_screaming_case() {
        assert_eq!(ViolationCode::NoMilestone.to_string(), "NO_MILESTONE");
        assert_eq!(ViolationCode::CiNotGreen.to_string(), "CI_NOT_GREEN");
    }
}
