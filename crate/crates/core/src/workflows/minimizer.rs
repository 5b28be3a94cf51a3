//! Bug-minimizer gateway: `@<bot> minimize` followed by a fenced script in a
//! comment or issue body dispatches a job to the external runner. Failing
//! reverse-dependency CI jobs get a ready-to-post proposal.
//!
//! The runner receives the script verbatim. Sandboxing untrusted scripts is the
//! runner's responsibility.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{Context, Workflow, WorkflowError};
use crate::model::{Action, Event, EventKind, EventPayload, JobOutcome, JobStatus, RepoId, RunnerResult, Sha};

use super::ci_bridge::SharedCandidates;

pub const NAME: &str = "minimizer_gateway";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("usage: put the reproduction script in a fenced code block right after `@{handle} minimize`")]
pub struct UsageError {
    pub handle: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestKind {
    Manual,
    CiProposed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimizationRequest {
    pub id: String,
    pub repo: RepoId,
    pub number: u64,
    pub comment_id: Option<u64>,
    pub triggerer: String,
    pub script: String,
    pub kind: RequestKind,
}

/// The script following a `@<handle> minimize` line, if the body has one.
pub fn parse_minimize_command(body: &str, bot_handle: &str) -> Result<Option<String>, UsageError> {
    let mention = format!("@{bot_handle}");
    let lines: Vec<&str> = body.lines().collect();
    let Some(at) = lines.iter().position(|l| {
        l.trim()
            .strip_prefix(&mention)
            .filter(|rest| rest.starts_with(char::is_whitespace))
            .is_some_and(|rest| rest.trim().eq_ignore_ascii_case("minimize"))
    }) else {
        return Ok(None);
    };
    let usage = || UsageError { handle: bot_handle.to_owned() };
    let mut rest = lines[at + 1..].iter().skip_while(|l| l.trim().is_empty());
    let fence = rest.next().map(|l| l.trim()).filter(|l| l.starts_with("```")).ok_or_else(usage)?;
    let marker: String = fence.chars().take_while(|c| *c == '`').collect();
    let mut script = Vec::new();
    for line in rest {
        if line.trim() == marker {
            let script = script.join("\n");
            return if script.trim().is_empty() { Err(usage()) } else { Ok(Some(script)) };
        }
        script.push(*line);
    }
    Err(usage())
}

/// The proposal comment offering minimization of a failed job.
pub fn proposal_comment(bot_handle: &str, job_name: &str, script: &str) -> String {
    format!(
        "The job `{job_name}` failed on the merge candidate of this PR. This may be a compatibility issue \
         with a reverse dependency. To minimize it, post a comment with:\n\n    @{bot_handle} minimize\n    ```\n{}\n    ```",
        script.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
    )
}

/// The command a user would post to accept a proposal.
pub fn proposal_command(bot_handle: &str, script: &str) -> String {
    format!("@{bot_handle} minimize\n```\n{script}\n```")
}

/// Proposal for a failed reverse-dependency job, once per (PR, job, candidate).
pub fn propose_from_ci(
    repo: &RepoId,
    bot_handle: &str,
    outcome: &JobOutcome,
    origin_pr: u64,
    candidate: &Sha,
    reverse_dependency_jobs: &BTreeSet<String>,
    script: &str,
    proposed: &mut BTreeSet<(u64, String, Sha)>,
) -> Vec<Action> {
    if outcome.status != JobStatus::Failure || !reverse_dependency_jobs.contains(&outcome.job_name) {
        return Vec::new();
    }
    if !proposed.insert((origin_pr, outcome.job_name.clone(), candidate.clone())) {
        return Vec::new();
    }
    vec![Action::PostComment {
        repo: repo.clone(),
        number: origin_pr,
        body: proposal_comment(bot_handle, &outcome.job_name, script),
    }]
}

/// Result comment for a finished request.
pub fn on_job_complete(request: &MinimizationRequest, result: &RunnerResult) -> Vec<Action> {
    let body = match result {
        RunnerResult::Reduced { reduced_case } => {
            format!("@{}: the minimizer produced this reduced test case:\n\n```coq\n{reduced_case}\n```", request.triggerer)
        }
        RunnerResult::Failed { diagnostic } => {
            format!("@{}: the minimization failed:\n\n```\n{diagnostic}\n```", request.triggerer)
        }
    };
    vec![Action::PostComment { repo: request.repo.clone(), number: request.number, body }]
}

pub struct Minimizer {
    candidates: SharedCandidates,
    outstanding: BTreeMap<String, MinimizationRequest>,
    proposed: BTreeSet<(u64, String, Sha)>,
}

impl Minimizer {
    pub fn new(candidates: SharedCandidates) -> Self {
        Minimizer { candidates, outstanding: BTreeMap::new(), proposed: BTreeSet::new() }
    }

    pub fn outstanding(&self) -> impl Iterator<Item = &MinimizationRequest> {
        self.outstanding.values()
    }

    fn request(
        &mut self,
        ctx: &Context<'_>,
        number: u64,
        comment_id: Option<u64>,
        author: &str,
        body: &str,
    ) -> Vec<Action> {
        let repo = ctx.source();
        if author == ctx.bot() {
            return Vec::new();
        }
        match parse_minimize_command(body, ctx.bot()) {
            Ok(None) => Vec::new(),
            Err(usage) => {
                vec![Action::PostComment { repo, number, body: format!("@{author}: {usage}") }]
            }
            Ok(Some(script)) => {
                let id = match comment_id {
                    Some(c) => format!("minimize-{}-{number}-c{c}", repo.full_name().replace('/', "-")),
                    None => format!("minimize-{}-{number}-issue", repo.full_name().replace('/', "-")),
                };
                if self.outstanding.contains_key(&id) {
                    return Vec::new();
                }
                let kind = if self.proposed.iter().any(|(pr, _, _)| *pr == number) {
                    RequestKind::CiProposed
                } else {
                    RequestKind::Manual
                };
                ctx.note(format!("dispatching {id} ({kind:?})"));
                self.outstanding.insert(
                    id.clone(),
                    MinimizationRequest {
                        id: id.clone(),
                        repo: repo.clone(),
                        number,
                        comment_id,
                        triggerer: author.to_owned(),
                        script: script.clone(),
                        kind,
                    },
                );
                vec![Action::DispatchJob { repo, token: id, script }]
            }
        }
    }

    fn reproduction_script(ctx: &Context<'_>, outcome: &JobOutcome, sha: &Sha) -> String {
        outcome.script.clone().unwrap_or_else(|| {
            crate::config::render_template(
                &ctx.repo.ci.repro_script_template,
                &[("job", outcome.job_name.clone()), ("sha", sha.to_string())],
                &[],
            )
        })
    }
}

impl Workflow for Minimizer {
    fn name(&self) -> &'static str {
        NAME
    }

    fn subscribes(&self, kind: EventKind) -> bool {
        matches!(
            kind,
            EventKind::CommentPosted | EventKind::IssueOpened | EventKind::JobFinished | EventKind::RunnerCompleted
        )
    }

    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError> {
        let source = ctx.source();
        match &event.payload {
            EventPayload::CommentPosted { number, comment_id, author, body, .. } if event.repo == source => {
                Ok(self.request(ctx, *number, Some(*comment_id), author, body))
            }
            EventPayload::IssueOpened { number, author, body } if event.repo == source => {
                Ok(self.request(ctx, *number, None, author, body))
            }
            EventPayload::JobFinished { job_id, job_name, sha, status: JobStatus::Failure, .. } if event.repo != source => {
                let reverse: BTreeSet<String> = ctx.repo.ci.reverse_dependency_jobs.iter().cloned().collect();
                if !reverse.contains(job_name) {
                    return Ok(Vec::new());
                }
                let origin = self.candidates.lock().expect("candidate store poisoned").origin_of(sha);
                let Some((pr, _)) = origin else {
                    ctx.note(format!("{job_name} failed on {}, which is no current candidate", sha.short()));
                    return Ok(Vec::new());
                };
                let outcome = ctx.forge.job_details(&event.repo, *job_id)?;
                let script = Self::reproduction_script(ctx, &outcome, sha);
                Ok(propose_from_ci(&source, ctx.bot(), &outcome, pr, sha, &reverse, &script, &mut self.proposed))
            }
            EventPayload::RunnerCompleted { token, result } => match self.outstanding.remove(token) {
                Some(request) => Ok(on_job_complete(&request, result)),
                None => {
                    tracing::warn!(token, "completion for unknown minimization request");
                    ctx.note(format!("dropping completion for unknown request {token}"));
                    Ok(Vec::new())
                }
            },
            _ => Ok(Vec::new()),
        }
    }
}
