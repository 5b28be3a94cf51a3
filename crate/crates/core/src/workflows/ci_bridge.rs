//! Mirrors PR merge candidates to the GitLab mirror and maps CI results back
//! onto the originating GitHub commit.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::engine::{Context, Workflow, WorkflowError};
use crate::graph::{CommitGraph, GraphError, MergeConflict};
use crate::model::{
    Action, CheckConclusion, Commit, Event, EventKind, EventPayload, JobOutcome, JobStatus, PipelineStatus, PrState,
    RepoId, Sha, StatusState, Timestamp,
};
use crate::client::ActionResult;

pub const NAME: &str = "ci_bridge";

pub const DEFAULT_ERROR_PATTERNS: [&str; 3] = [r"^Error:", r"^.*\bError\b.*$", r"^make.*\*\*\*"];

/// Lines in an excerpt window and in the no-match fallback.
pub const EXCERPT_LINES: usize = 40;
pub const EXCERPT_MAX_BYTES: usize = 64 * 1024;

/// Commit status context used for whole-pipeline results.
pub const PIPELINE_CONTEXT: &str = "GitLab CI pipeline";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorMapping {
    pub source: RepoId,
    pub mirror: RepoId,
    pub branch_prefix: String,
}

impl MirrorMapping {
    pub fn branch_for(&self, pr_number: u64) -> String {
        format!("{}{pr_number}", self.branch_prefix)
    }

    pub fn pr_for_branch(&self, branch: &str) -> Option<u64> {
        branch.strip_prefix(&self.branch_prefix)?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pr_number: u64,
    pub origin_head_sha: Sha,
    pub base_sha: Sha,
    pub candidate_sha: Sha,
    pub pushed_at: Timestamp,
}

/// Current candidate per PR. Shared with the minimizer, which needs the same
/// candidate-to-origin mapping.
#[derive(Debug, Default)]
pub struct CandidateStore {
    by_pr: BTreeMap<u64, CandidateRecord>,
}

impl CandidateStore {
    pub fn records(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.by_pr.values()
    }

    pub fn current(&self, pr_number: u64) -> Option<&CandidateRecord> {
        self.by_pr.get(&pr_number)
    }

    /// Replaces the PR's candidate, superseding the previous one.
    pub fn install(&mut self, record: CandidateRecord) {
        self.by_pr.insert(record.pr_number, record);
    }

    pub fn retire(&mut self, pr_number: u64) -> Option<CandidateRecord> {
        self.by_pr.remove(&pr_number)
    }

    pub fn origin_of(&self, tested: &Sha) -> Option<(u64, Sha)> {
        map_to_origin(self.by_pr.values(), tested)
    }
}

pub type SharedCandidates = Arc<Mutex<CandidateStore>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncPlan {
    Candidate { record: CandidateRecord, push: Action },
    Conflict(MergeConflict),
}

/// The synthesized merge of `head` into `base`, or the conflicting files.
pub fn synthesize_candidate(
    graph: &CommitGraph,
    pr_number: u64,
    head: &Sha,
    base: &Sha,
) -> Result<Result<Commit, MergeConflict>, GraphError> {
    let message = format!("Merge candidate for PR #{pr_number}: {} into {}", head.short(), base.short());
    graph.try_merge(base, head, &message)
}

/// Plans the mirror update for one open PR.
pub fn plan_sync(
    graph: &CommitGraph,
    mapping: &MirrorMapping,
    pr_number: u64,
    head: &Sha,
    base: &Sha,
    now: Timestamp,
) -> Result<SyncPlan, GraphError> {
    Ok(match synthesize_candidate(graph, pr_number, head, base)? {
        Err(conflict) => SyncPlan::Conflict(conflict),
        Ok(commit) => {
            let record = CandidateRecord {
                pr_number,
                origin_head_sha: head.clone(),
                base_sha: base.clone(),
                candidate_sha: commit.sha.clone(),
                pushed_at: now,
            };
            let push = Action::PushBranch {
                repo: mapping.mirror.clone(),
                branch: mapping.branch_for(pr_number),
                source: commit.sha.clone(),
                force: true,
                objects: vec![commit],
            };
            SyncPlan::Candidate { record, push }
        }
    })
}

/// The unique record whose candidate is `tested`.
pub fn map_to_origin<'a>(records: impl IntoIterator<Item = &'a CandidateRecord>, tested: &Sha) -> Option<(u64, Sha)> {
    records
        .into_iter()
        .find(|r| &r.candidate_sha == tested)
        .map(|r| (r.pr_number, r.origin_head_sha.clone()))
}

/// Compiles error patterns, skipping invalid ones (configuration validation
/// rejects those before startup).
pub fn compile_patterns(patterns: &[String]) -> Vec<Regex> {
    patterns.iter().filter_map(|p| Regex::new(p).ok()).collect()
}

fn truncate_utf8(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut end = max;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// Error excerpt from a CI log. Patterns are tried in order; the first one
/// matching any line wins and the window starts at its earliest match.
pub fn summarize_failure(log: &str, patterns: &[Regex]) -> String {
    let lines: Vec<&str> = log.lines().collect();
    let start = patterns.iter().find_map(|re| lines.iter().position(|l| re.is_match(l)));
    let window = match start {
        Some(i) => &lines[i..(i + EXCERPT_LINES).min(lines.len())],
        None => &lines[lines.len().saturating_sub(EXCERPT_LINES)..],
    };
    truncate_utf8(&window.join("\n"), EXCERPT_MAX_BYTES).to_owned()
}

/// Check run reporting `outcome` on the origin commit.
pub fn report(
    source: &RepoId,
    outcome: &JobOutcome,
    origin: (u64, &Sha),
    docs_jobs: &BTreeSet<String>,
    patterns: &[Regex],
) -> Vec<Action> {
    let (pr_number, sha) = origin;
    let conclusion = match outcome.status {
        JobStatus::Success => CheckConclusion::Success,
        JobStatus::Failure => CheckConclusion::Failure,
        JobStatus::Canceled => CheckConclusion::Cancelled,
    };
    let mut summary = format!("Job [{}]({}) for PR #{pr_number}: ", outcome.job_name, outcome.web_url);
    let mut links = Vec::new();
    match outcome.status {
        JobStatus::Failure => {
            summary.push_str("failed.\n\n```\n");
            summary.push_str(&summarize_failure(&outcome.log, patterns));
            summary.push_str("\n```\n");
        }
        JobStatus::Canceled => summary.push_str("canceled.\n"),
        JobStatus::Success => {
            summary.push_str("succeeded.\n");
            if docs_jobs.contains(&outcome.job_name) && !outcome.artifact_links.is_empty() {
                summary.push_str("\nArtifacts:\n");
                for link in &outcome.artifact_links {
                    summary.push_str(&format!("- [{}]({})\n", link.name, link.url));
                }
                links = outcome.artifact_links.clone();
            }
        }
    }
    vec![Action::CreateCheckRun {
        repo: source.clone(),
        head_sha: sha.clone(),
        name: outcome.job_name.clone(),
        conclusion,
        summary,
        details_url: Some(outcome.web_url.clone()),
        links,
    }]
}

pub struct CiBridge {
    candidates: SharedCandidates,
    /// Candidates planned but not yet pushed, keyed by mirror branch.
    pending: BTreeMap<String, CandidateRecord>,
}

impl CiBridge {
    pub fn new(candidates: SharedCandidates) -> Self {
        CiBridge { candidates, pending: BTreeMap::new() }
    }

    fn mapping(ctx: &Context<'_>) -> Option<MirrorMapping> {
        let mirror = ctx.repo.mirror.as_ref()?;
        Some(MirrorMapping {
            source: ctx.repo.repo_id(),
            mirror: ctx.repo.mirror_id()?,
            branch_prefix: mirror.branch_prefix.clone(),
        })
    }

    fn store(&self) -> std::sync::MutexGuard<'_, CandidateStore> {
        self.candidates.lock().expect("candidate store poisoned")
    }

    fn sync_pr(&mut self, ctx: &Context<'_>, mapping: &MirrorMapping, number: u64) -> Result<Vec<Action>, WorkflowError> {
        let pr = ctx.forge.get_pr_snapshot(&mapping.source, number)?;
        if pr.state != PrState::Open {
            ctx.note(format!("PR #{number} is not open; nothing to sync"));
            return Ok(Vec::new());
        }
        let graph = ctx.forge.commit_graph(&mapping.source, &[pr.head.sha.clone(), pr.base.sha.clone()])?;
        let plan = plan_sync(&graph, mapping, number, &pr.head.sha, &pr.base.sha, ctx.now)
            .map_err(|e| WorkflowError::Invalid(e.to_string()))?;
        match plan {
            SyncPlan::Conflict(conflict) => {
                ctx.note(format!("PR #{number} conflicts with {} on {:?}; no candidate", pr.base.branch, conflict.files));
                if self.store().retire(number).is_some() {
                    ctx.note(format!("retired the previous candidate of PR #{number}"));
                }
                Ok(Vec::new())
            }
            SyncPlan::Candidate { record, push } => {
                ctx.note(format!(
                    "candidate {} for PR #{number} (head {}, base {})",
                    record.candidate_sha.short(),
                    record.origin_head_sha.short(),
                    record.base_sha.short()
                ));
                self.pending.insert(mapping.branch_for(number), record);
                Ok(vec![push])
            }
        }
    }

    fn sync_base(&mut self, ctx: &Context<'_>, mapping: &MirrorMapping, branch: &str) -> Result<Vec<Action>, WorkflowError> {
        let mut actions = Vec::new();
        for number in ctx.forge.list_open_prs(&mapping.source)? {
            let pr = ctx.forge.get_pr_snapshot(&mapping.source, number)?;
            if pr.base.branch == branch {
                actions.extend(self.sync_pr(ctx, mapping, number)?);
            }
        }
        Ok(actions)
    }
}

impl Workflow for CiBridge {
    fn name(&self) -> &'static str {
        NAME
    }

    fn subscribes(&self, kind: EventKind) -> bool {
        matches!(
            kind,
            EventKind::PrOpened
                | EventKind::PrSynchronized
                | EventKind::PrClosed
                | EventKind::BaseBranchPushed
                | EventKind::PushToBranch
                | EventKind::PipelineFinished
                | EventKind::JobFinished
        )
    }

    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError> {
        let Some(mapping) = Self::mapping(ctx) else {
            ctx.note("no mirror configured");
            return Ok(Vec::new());
        };
        let from_source = event.repo == mapping.source;
        match &event.payload {
            EventPayload::PrOpened { number } | EventPayload::PrSynchronized { number } if from_source => {
                self.sync_pr(ctx, &mapping, *number)
            }
            EventPayload::PrClosed { number, .. } if from_source => {
                self.store().retire(*number);
                Ok(vec![Action::DeleteBranch { repo: mapping.mirror.clone(), branch: mapping.branch_for(*number) }])
            }
            EventPayload::BaseBranchPushed { branch, .. } | EventPayload::PushToBranch { branch, .. } if from_source => {
                self.sync_base(ctx, &mapping, branch)
            }
            EventPayload::PipelineFinished { sha, status, pipeline_id, .. } if !from_source => {
                let Some((pr, origin)) = self.store().origin_of(sha) else {
                    ctx.note(format!("pipeline {pipeline_id} tested {} which is no current candidate", sha.short()));
                    return Ok(Vec::new());
                };
                let (state, description) = match status {
                    PipelineStatus::Success => (StatusState::Success, "Pipeline succeeded on the merge candidate"),
                    PipelineStatus::Failure => (StatusState::Failure, "Pipeline failed on the merge candidate"),
                    PipelineStatus::Canceled => (StatusState::Error, "Pipeline canceled"),
                };
                ctx.note(format!("pipeline {pipeline_id} maps to PR #{pr} head {}", origin.short()));
                Ok(vec![Action::SetCommitStatus {
                    repo: mapping.source.clone(),
                    sha: origin,
                    context: PIPELINE_CONTEXT.to_owned(),
                    state,
                    description: description.to_owned(),
                    target_url: Some(format!(
                        "https://gitlab.example/{}/-/pipelines/{pipeline_id}",
                        mapping.mirror.full_name()
                    )),
                }])
            }
            EventPayload::JobFinished { job_id, sha, job_name, .. } if !from_source => {
                let Some((pr, origin)) = self.store().origin_of(sha) else {
                    ctx.note(format!("job {job_name} tested {} which is no current candidate", sha.short()));
                    return Ok(Vec::new());
                };
                let outcome = ctx.forge.job_details(&mapping.mirror, *job_id)?;
                let docs: BTreeSet<String> = ctx.repo.ci.docs_jobs.iter().cloned().collect();
                let patterns = compile_patterns(&ctx.repo.ci.error_patterns);
                Ok(report(&mapping.source, &outcome, (pr, &origin), &docs, &patterns))
            }
            _ => Ok(Vec::new()),
        }
    }

    fn after_apply(&mut self, ctx: &Context<'_>, action: &Action, result: &ActionResult) -> Vec<Action> {
        if let Action::PushBranch { branch, .. } = action {
            if let Some(record) = self.pending.remove(branch) {
                if result.is_failed() {
                    ctx.note(format!("push of {branch} failed: {}", result.detail));
                    self.store().retire(record.pr_number);
                } else {
                    self.store().install(record);
                }
            }
        }
        Vec::new()
    }
}
