//! Renders mock notifications as provider-shaped webhook deliveries.

use serde_json::{json, Value};

use crate::gateway::{Channel, RawDelivery, GITHUB_DELIVERY_HEADER, GITHUB_EVENT_HEADER, GITLAB_DELIVERY_HEADER, GITLAB_EVENT_HEADER};
use crate::model::{JobStatus, PipelineStatus, RepoId, Timestamp};

use super::state::Notification;

const API: &str = "https://api.github.com";

fn repository(repo: &RepoId) -> Value {
    json!({
        "full_name": repo.full_name(),
        "name": repo.name(),
        "owner": {"login": repo.owner()},
        "html_url": format!("https://github.com/{}", repo.full_name()),
    })
}

fn user(login: &str) -> Value {
    json!({"login": login, "type": "User"})
}

fn github(kind: &str, delivery_id: &str, body: Value, at: Timestamp) -> RawDelivery {
    RawDelivery::new(
        Channel::GitHub,
        [(GITHUB_EVENT_HEADER, kind.to_owned()), (GITHUB_DELIVERY_HEADER, delivery_id.to_owned())],
        serde_json::to_vec(&body).expect("json body"),
        at,
    )
}

fn gitlab(kind: &str, delivery_id: &str, body: Value, at: Timestamp) -> RawDelivery {
    RawDelivery::new(
        Channel::GitLab,
        [(GITLAB_EVENT_HEADER, kind.to_owned()), (GITLAB_DELIVERY_HEADER, delivery_id.to_owned())],
        serde_json::to_vec(&body).expect("json body"),
        at,
    )
}

fn pipeline_status(status: PipelineStatus) -> &'static str {
    match status {
        PipelineStatus::Success => "success",
        PipelineStatus::Failure => "failed",
        PipelineStatus::Canceled => "canceled",
    }
}

fn job_status(status: JobStatus) -> &'static str {
    match status {
        JobStatus::Success => "success",
        JobStatus::Failure => "failed",
        JobStatus::Canceled => "canceled",
    }
}

/// Builds the unsigned delivery for `notification`.
pub fn render(notification: &Notification, delivery_id: &str, at: Timestamp) -> RawDelivery {
    match notification {
        Notification::PullRequest { repo, number, action, merged, sender } => github(
            "pull_request",
            delivery_id,
            json!({
                "action": action,
                "number": number,
                "pull_request": {
                    "number": number,
                    "merged": merged,
                    "url": format!("{API}/repos/{}/pulls/{number}", repo.full_name()),
                },
                "repository": repository(repo),
                "sender": user(sender),
            }),
            at,
        ),
        Notification::IssueComment { repo, number, on_pr, comment_id, action, author, body, issue_author } => {
            let mut issue = json!({
                "number": number,
                "user": user(issue_author),
                "url": format!("{API}/repos/{}/issues/{number}", repo.full_name()),
            });
            if *on_pr {
                issue["pull_request"] = json!({"url": format!("{API}/repos/{}/pulls/{number}", repo.full_name())});
            }
            github(
                "issue_comment",
                delivery_id,
                json!({
                    "action": action,
                    "issue": issue,
                    "comment": {"id": comment_id, "body": body, "user": user(author)},
                    "repository": repository(repo),
                    "sender": user(author),
                }),
                at,
            )
        }
        Notification::IssueOpened { repo, number, author, title, body } => github(
            "issues",
            delivery_id,
            json!({
                "action": "opened",
                "issue": {"number": number, "title": title, "body": body, "user": user(author)},
                "repository": repository(repo),
                "sender": user(author),
            }),
            at,
        ),
        Notification::Push { repo, branch, before, after, commits, pusher } => github(
            "push",
            delivery_id,
            json!({
                "ref": format!("refs/heads/{branch}"),
                "before": before.as_ref().map(|s| s.to_string()).unwrap_or_else(|| "0".repeat(40)),
                "after": after.to_string(),
                "created": before.is_none(),
                "deleted": false,
                "commits": commits.iter().map(|c| json!({"id": c.sha.to_string(), "message": c.message})).collect::<Vec<_>>(),
                "pusher": {"name": pusher},
                "repository": repository(repo),
                "sender": user(pusher),
            }),
            at,
        ),
        Notification::CardDeleted { repo, board, column_id, pr_number, actor } => github(
            "project_card",
            delivery_id,
            json!({
                "action": "deleted",
                "project_card": {
                    "column_id": column_id,
                    "content_url": format!("{API}/repos/{}/issues/{pr_number}", repo.full_name()),
                    "project_url": format!("{API}/projects/{board}"),
                },
                "repository": repository(repo),
                "sender": user(actor),
            }),
            at,
        ),
        Notification::Pipeline { repo, pipeline_id, sha, branch, status } => gitlab(
            "Pipeline Hook",
            delivery_id,
            json!({
                "object_kind": "pipeline",
                "object_attributes": {
                    "id": pipeline_id,
                    "sha": sha.to_string(),
                    "ref": branch,
                    "status": pipeline_status(*status),
                },
                "project": {"path_with_namespace": repo.full_name()},
            }),
            at,
        ),
        Notification::Job { repo, job_id, job_name, sha, branch, status } => gitlab(
            "Job Hook",
            delivery_id,
            json!({
                "object_kind": "build",
                "build_id": job_id,
                "build_name": job_name,
                "build_status": job_status(*status),
                "sha": sha.to_string(),
                "ref": branch,
                "project_name": format!("{} / {}", repo.owner(), repo.name()),
                "project": {"path_with_namespace": repo.full_name()},
            }),
            at,
        ),
        Notification::RunnerCompletion { repo, token, result } => {
            let mut body = serde_json::to_value(result).expect("runner result json");
            body["token"] = json!(token);
            body["repo"] = json!(repo.to_string());
            RawDelivery::new(Channel::Runner, Vec::<(&str, String)>::new(), serde_json::to_vec(&body).expect("json body"), at)
        }
    }
}
