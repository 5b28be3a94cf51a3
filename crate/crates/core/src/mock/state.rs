//! In-memory forge state and its pure transition function.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{ActionResult, ForgeError, ForgeReads};
use crate::graph::CommitGraph;
use crate::model::{
    Action, BoardCard, CheckConclusion, CiVerdict, Commit, GitRef, JobOutcome, JobStatus, LabelPrefixes, Link,
    Mergeability, Milestone, PipelineStatus, PrSnapshot, PrState, PushedCommit, RepoId, RunnerResult, Sha,
    StatusState, Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrRecord {
    pub number: u64,
    pub title: String,
    pub author: String,
    pub head_branch: String,
    pub head: Sha,
    pub base_branch: String,
    pub labels: BTreeSet<String>,
    pub milestone: Option<u64>,
    pub assignees: BTreeSet<String>,
    pub approved_reviews: u32,
    pub changes_requested_reviews: u32,
    pub state: PrState,
    pub merge_commit: Option<Sha>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub number: u64,
    pub title: String,
    pub author: String,
    pub body: String,
    pub labels: BTreeSet<String>,
    pub milestone: Option<u64>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub id: u64,
    pub number: u64,
    pub author: String,
    pub body: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub number: u64,
    pub label: String,
    pub added: bool,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub id: u64,
    pub name: String,
    pub cards: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    pub columns: Vec<Column>,
}

impl Board {
    fn card_column(&self, pr: u64) -> Option<usize> {
        self.columns.iter().position(|c| c.cards.contains(&pr))
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub state: StatusState,
    pub description: String,
    pub target_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRunRecord {
    pub conclusion: CheckConclusion,
    pub summary: String,
    pub details_url: Option<String>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub sha: Sha,
    pub branch: String,
    pub outcome: JobOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub sha: Sha,
    pub branch: String,
    pub status: PipelineStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoState {
    pub branches: BTreeMap<String, Sha>,
    pub prs: BTreeMap<u64, PrRecord>,
    pub issues: BTreeMap<u64, IssueRecord>,
    pub milestones: BTreeMap<u64, Milestone>,
    pub label_events: Vec<LabelEvent>,
    pub comments: BTreeMap<u64, CommentRecord>,
    pub boards: BTreeMap<String, Board>,
    pub statuses: BTreeMap<Sha, BTreeMap<String, StatusRecord>>,
    pub check_runs: BTreeMap<Sha, BTreeMap<String, CheckRunRecord>>,
    pub jobs: BTreeMap<u64, JobRecord>,
    pub pipelines: BTreeMap<u64, PipelineRecord>,
    pub signed_commits: BTreeSet<Sha>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerState {
    /// Canned results keyed by script; anything else gets a generic reduction.
    pub canned: BTreeMap<String, RunnerResult>,
    pub dispatched: BTreeMap<String, (RepoId, String)>,
}

impl RunnerState {
    pub fn result_for(&self, script: &str) -> RunnerResult {
        self.canned.get(script).cloned().unwrap_or_else(|| RunnerResult::Reduced {
            reduced_case: format!("(* reduced from a {}-line script *)\nGoal False. Admitted.", script.lines().count()),
        })
    }
}

/// Something that happened on the forge and would be announced by webhook.
/// Each notification carries everything needed to render its payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Notification {
    PullRequest { repo: RepoId, number: u64, action: String, merged: bool, sender: String },
    IssueComment { repo: RepoId, number: u64, on_pr: bool, comment_id: u64, action: String, author: String, body: String, issue_author: String },
    IssueOpened { repo: RepoId, number: u64, author: String, title: String, body: String },
    Push { repo: RepoId, branch: String, before: Option<Sha>, after: Sha, commits: Vec<PushedCommit>, pusher: String },
    CardDeleted { repo: RepoId, board: String, column_id: u64, pr_number: u64, actor: String },
    Pipeline { repo: RepoId, pipeline_id: u64, sha: Sha, branch: String, status: PipelineStatus },
    Job { repo: RepoId, job_id: u64, job_name: String, sha: Sha, branch: String, status: JobStatus },
    RunnerCompletion { repo: RepoId, token: String, result: RunnerResult },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeState {
    pub now: Timestamp,
    pub bot_login: String,
    #[serde(default)]
    pub label_prefixes: LabelPrefixes,
    pub commits: CommitGraph,
    /// Human-friendly names for commits, used by scenarios.
    pub aliases: BTreeMap<String, Sha>,
    pub repos: BTreeMap<RepoId, RepoState>,
    /// Keyed by `org/team`.
    pub teams: BTreeMap<String, BTreeSet<String>>,
    pub runner: RunnerState,
    pub next_id: u64,
    #[serde(skip)]
    pub outbox: Vec<Notification>,
}

fn not_found(what: impl Into<String>) -> ForgeError {
    ForgeError::NotFound(what.into())
}

impl ForgeState {
    pub fn new(now: Timestamp, bot_login: &str) -> Self {
        ForgeState {
            now,
            bot_login: bot_login.to_owned(),
            label_prefixes: LabelPrefixes::default(),
            commits: CommitGraph::new(),
            aliases: BTreeMap::new(),
            repos: BTreeMap::new(),
            teams: BTreeMap::new(),
            runner: RunnerState::default(),
            next_id: 1000,
            outbox: Vec::new(),
        }
    }

    /// Stable digest of everything except the pending outbox.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("forge state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    pub fn repo(&self, repo: &RepoId) -> Result<&RepoState, ForgeError> {
        self.repos.get(repo).ok_or_else(|| not_found(format!("repository {repo}")))
    }

    pub fn repo_mut(&mut self, repo: &RepoId) -> Result<&mut RepoState, ForgeError> {
        self.repos.get_mut(repo).ok_or_else(|| not_found(format!("repository {repo}")))
    }

    pub fn resolve(&self, name: &str) -> Option<Sha> {
        self.aliases.get(name).cloned().or_else(|| Sha::parse(name).ok().filter(|s| self.commits.contains(s)))
    }

    /// Applies `action` on a copy and returns the successor state. Failed
    /// actions leave the state untouched.
    pub fn step(&self, action: &Action) -> (ForgeState, ActionResult) {
        let mut next = self.clone();
        let result = next.apply(action);
        if result.is_failed() {
            (self.clone(), result)
        } else {
            (next, result)
        }
    }

    /// In-place variant of [`ForgeState::step`]. May leave partial changes on
    /// failure; callers wanting atomicity go through `step`.
    pub fn apply(&mut self, action: &Action) -> ActionResult {
        match self.apply_inner(action) {
            Ok(result) => result,
            Err(e) => ActionResult::failed(e.to_string()),
        }
    }

    fn apply_inner(&mut self, action: &Action) -> Result<ActionResult, ForgeError> {
        let now = self.now;
        let bot = self.bot_login.clone();
        match action {
            Action::AddLabel { repo, number, label } => {
                let r = self.repo_mut(repo)?;
                let labels = labels_mut(r, *number)?;
                if !labels.insert(label.clone()) {
                    return Ok(ActionResult::noop("label already present"));
                }
                r.label_events.push(LabelEvent { number: *number, label: label.clone(), added: true, at: now });
                Ok(ActionResult::applied())
            }
            Action::RemoveLabel { repo, number, label } => {
                let r = self.repo_mut(repo)?;
                let labels = labels_mut(r, *number)?;
                if !labels.remove(label) {
                    return Ok(ActionResult::noop("label not present"));
                }
                r.label_events.push(LabelEvent { number: *number, label: label.clone(), added: false, at: now });
                Ok(ActionResult::applied())
            }
            Action::PostComment { repo, number, body } => {
                let r = self.repo(repo)?;
                let (on_pr, issue_author) = thread(r, *number)?;
                let last = r.comments.values().rfind(|c| c.number == *number);
                if last.is_some_and(|c| c.author == bot && c.body == *body) {
                    return Ok(ActionResult::noop("identical comment already posted"));
                }
                let id = self.fresh_id();
                let r = self.repo_mut(repo)?;
                r.comments.insert(
                    id,
                    CommentRecord { id, number: *number, author: bot.clone(), body: body.clone(), created_at: now },
                );
                self.outbox.push(Notification::IssueComment {
                    repo: repo.clone(),
                    number: *number,
                    on_pr,
                    comment_id: id,
                    action: "created".into(),
                    author: bot,
                    body: body.clone(),
                    issue_author,
                });
                Ok(ActionResult { status: crate::client::ActionStatus::Applied, detail: format!("comment {id}") })
            }
            Action::UpdateComment { repo, comment_id, body } => {
                let r = self.repo_mut(repo)?;
                let comment = r.comments.get_mut(comment_id).ok_or_else(|| not_found(format!("comment {comment_id}")))?;
                if comment.body == *body {
                    return Ok(ActionResult::noop("comment unchanged"));
                }
                comment.body = body.clone();
                let (number, author) = (comment.number, comment.author.clone());
                let (on_pr, issue_author) = thread(r, number)?;
                self.outbox.push(Notification::IssueComment {
                    repo: repo.clone(),
                    number,
                    on_pr,
                    comment_id: *comment_id,
                    action: "edited".into(),
                    author,
                    body: body.clone(),
                    issue_author,
                });
                Ok(ActionResult::applied())
            }
            Action::ClosePr { repo, number } => {
                let r = self.repo_mut(repo)?;
                let pr = r.prs.get_mut(number).ok_or_else(|| not_found(format!("pull request #{number}")))?;
                match pr.state {
                    PrState::Closed => Ok(ActionResult::noop("already closed")),
                    PrState::Merged => Ok(ActionResult::failed("pull request is merged")),
                    PrState::Open => {
                        pr.state = PrState::Closed;
                        self.outbox.push(Notification::PullRequest {
                            repo: repo.clone(),
                            number: *number,
                            action: "closed".into(),
                            merged: false,
                            sender: bot,
                        });
                        Ok(ActionResult::applied())
                    }
                }
            }
            Action::SetMilestone { repo, number, milestone } => {
                let r = self.repo_mut(repo)?;
                if !r.milestones.contains_key(milestone) {
                    return Ok(ActionResult::failed(format!("no milestone {milestone}")));
                }
                let slot = if let Some(pr) = r.prs.get_mut(number) {
                    &mut pr.milestone
                } else if let Some(issue) = r.issues.get_mut(number) {
                    &mut issue.milestone
                } else {
                    return Err(not_found(format!("issue or pull request #{number}")));
                };
                if *slot == Some(*milestone) {
                    return Ok(ActionResult::noop("milestone already set"));
                }
                *slot = Some(*milestone);
                Ok(ActionResult::applied())
            }
            Action::MergePr { repo, number, message, signed } => self.merge_pr(repo, *number, message, *signed),
            Action::PushBranch { repo, branch, source, force, objects } => {
                self.repo(repo)?;
                if let Err(e) = self.commits.insert_all(objects.iter().cloned()) {
                    return Ok(ActionResult::failed(format!("rejected objects: {e}")));
                }
                if !self.commits.contains(source) {
                    return Ok(ActionResult::failed(format!("unknown object {source}")));
                }
                let old = self.repo(repo)?.branches.get(branch).cloned();
                if old.as_ref() == Some(source) {
                    return Ok(ActionResult::noop("branch already at source"));
                }
                if let Some(old) = &old {
                    let fast_forward = self.commits.is_ancestor(old, source).unwrap_or(false);
                    if !force && !fast_forward {
                        return Ok(ActionResult::failed("non-fast-forward push"));
                    }
                }
                self.repo_mut(repo)?.branches.insert(branch.clone(), source.clone());
                self.announce_push(repo, branch, old, source.clone(), bot);
                Ok(ActionResult::applied())
            }
            Action::DeleteBranch { repo, branch } => {
                let r = self.repo_mut(repo)?;
                if r.branches.remove(branch).is_none() {
                    return Ok(ActionResult::noop("branch absent"));
                }
                Ok(ActionResult::applied())
            }
            Action::CreateCheckRun { repo, head_sha, name, conclusion, summary, details_url, links } => {
                let r = self.repo_mut(repo)?;
                let record = CheckRunRecord {
                    conclusion: *conclusion,
                    summary: summary.clone(),
                    details_url: details_url.clone(),
                    links: links.clone(),
                };
                let runs = r.check_runs.entry(head_sha.clone()).or_default();
                if runs.get(name) == Some(&record) {
                    return Ok(ActionResult::noop("identical check run exists"));
                }
                runs.insert(name.clone(), record);
                Ok(ActionResult::applied())
            }
            Action::SetCommitStatus { repo, sha, context, state, description, target_url } => {
                let r = self.repo_mut(repo)?;
                let record =
                    StatusRecord { state: *state, description: description.clone(), target_url: target_url.clone() };
                let statuses = r.statuses.entry(sha.clone()).or_default();
                if statuses.get(context) == Some(&record) {
                    return Ok(ActionResult::noop("identical status exists"));
                }
                statuses.insert(context.clone(), record);
                Ok(ActionResult::applied())
            }
            Action::AddCardToColumn { repo, board, column, pr_number } => {
                let r = self.repo_mut(repo)?;
                let b = r.boards.get_mut(board).ok_or_else(|| not_found(format!("board {board}")))?;
                let Some(target) = b.column_index(column) else {
                    return Ok(ActionResult::failed(format!("no column {column:?} on board {board}")));
                };
                match b.card_column(*pr_number) {
                    Some(i) if i == target => Ok(ActionResult::noop("card already in column")),
                    Some(i) => Ok(ActionResult::failed(format!("card already in column {:?}", b.columns[i].name))),
                    None => {
                        b.columns[target].cards.push(*pr_number);
                        Ok(ActionResult::applied())
                    }
                }
            }
            Action::MoveCard { repo, board, pr_number, column } => {
                let r = self.repo_mut(repo)?;
                let b = r.boards.get_mut(board).ok_or_else(|| not_found(format!("board {board}")))?;
                let Some(target) = b.column_index(column) else {
                    return Ok(ActionResult::failed(format!("no column {column:?} on board {board}")));
                };
                match b.card_column(*pr_number) {
                    None => Ok(ActionResult::failed(format!("no card for #{pr_number}"))),
                    Some(i) if i == target => Ok(ActionResult::noop("card already in column")),
                    Some(i) => {
                        b.columns[i].cards.retain(|n| n != pr_number);
                        b.columns[target].cards.push(*pr_number);
                        Ok(ActionResult::applied())
                    }
                }
            }
            Action::DispatchJob { repo, token, script } => {
                self.repo(repo)?;
                if self.runner.dispatched.contains_key(token) {
                    return Ok(ActionResult::noop("job already dispatched"));
                }
                self.runner.dispatched.insert(token.clone(), (repo.clone(), script.clone()));
                let result = self.runner.result_for(script);
                self.outbox.push(Notification::RunnerCompletion { repo: repo.clone(), token: token.clone(), result });
                Ok(ActionResult::applied())
            }
        }
    }

    fn merge_pr(&mut self, repo: &RepoId, number: u64, message: &str, signed: bool) -> Result<ActionResult, ForgeError> {
        let bot = self.bot_login.clone();
        let r = self.repo(repo)?;
        let pr = r.prs.get(&number).ok_or_else(|| not_found(format!("pull request #{number}")))?.clone();
        match pr.state {
            PrState::Merged => {
                let same = pr
                    .merge_commit
                    .as_ref()
                    .and_then(|m| self.commits.get(m))
                    .is_some_and(|c| c.message == message);
                return Ok(if same {
                    ActionResult::noop("already merged")
                } else {
                    ActionResult::failed("already merged")
                });
            }
            PrState::Closed => return Ok(ActionResult::failed("pull request is closed")),
            PrState::Open => {}
        }
        let base = r
            .branches
            .get(&pr.base_branch)
            .cloned()
            .ok_or_else(|| not_found(format!("base branch {}", pr.base_branch)))?;
        let conflicts = self.commits.conflicts(&base, &pr.head).map_err(|e| not_found(e.to_string()))?;
        if !conflicts.is_empty() {
            return Ok(ActionResult::failed(format!(
                "not mergeable: conflicting files {}",
                conflicts.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        let merge = Commit::new(vec![base.clone(), pr.head.clone()], BTreeSet::new(), message);
        let merge_sha = merge.sha.clone();
        self.commits.insert(merge).map_err(|e| not_found(e.to_string()))?;
        let r = self.repo_mut(repo)?;
        r.branches.insert(pr.base_branch.clone(), merge_sha.clone());
        if signed {
            r.signed_commits.insert(merge_sha.clone());
        }
        let record = r.prs.get_mut(&number).expect("pr exists");
        record.state = PrState::Merged;
        record.merge_commit = Some(merge_sha.clone());
        self.outbox.push(Notification::PullRequest {
            repo: repo.clone(),
            number,
            action: "closed".into(),
            merged: true,
            sender: bot.clone(),
        });
        self.announce_push(repo, &pr.base_branch, Some(base), merge_sha.clone(), bot);
        Ok(ActionResult { status: crate::client::ActionStatus::Applied, detail: format!("merged as {merge_sha}") })
    }

    fn announce_push(&mut self, repo: &RepoId, branch: &str, before: Option<Sha>, after: Sha, pusher: String) {
        if repo.provider() != crate::model::Provider::GitHub {
            return;
        }
        let commits = self
            .commits
            .range(before.as_ref(), &after)
            .unwrap_or_default()
            .into_iter()
            .map(|c| PushedCommit { sha: c.sha, message: c.message })
            .collect();
        self.outbox.push(Notification::Push { repo: repo.clone(), branch: branch.to_owned(), before, after, commits, pusher });
    }

    pub fn snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError> {
        let r = self.repo(repo)?;
        let pr = r.prs.get(&number).ok_or_else(|| not_found(format!("pull request #{number} in {repo}")))?;
        let base_sha = r
            .branches
            .get(&pr.base_branch)
            .cloned()
            .ok_or_else(|| not_found(format!("base branch {}", pr.base_branch)))?;
        let labels = pr
            .labels
            .iter()
            .map(|l| self.label_prefixes.classify(l))
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|e| ForgeError::Config(e.to_string()))?;
        let milestone = pr.milestone.and_then(|m| r.milestones.get(&m).cloned());
        let mergeable = match pr.state {
            PrState::Open => match self.commits.conflicts(&base_sha, &pr.head) {
                Ok(files) if files.is_empty() => Mergeability::Clean,
                Ok(_) => Mergeability::Conflicting,
                Err(_) => Mergeability::Unknown,
            },
            _ => Mergeability::Unknown,
        };
        Ok(PrSnapshot {
            number,
            title: pr.title.clone(),
            author: pr.author.clone(),
            head: GitRef { repo: repo.clone(), branch: pr.head_branch.clone(), sha: pr.head.clone() },
            base: GitRef { repo: repo.clone(), branch: pr.base_branch.clone(), sha: base_sha },
            labels,
            milestone,
            assignees: pr.assignees.clone(),
            approved_reviews: pr.approved_reviews,
            changes_requested_reviews: pr.changes_requested_reviews,
            ci_verdict: ci_verdict(r, &pr.head),
            state: pr.state,
            mergeable,
            merge_commit: pr.merge_commit.clone(),
        })
    }
}

fn ci_verdict(r: &RepoState, sha: &Sha) -> CiVerdict {
    let mut states = Vec::new();
    if let Some(statuses) = r.statuses.get(sha) {
        states.extend(statuses.values().map(|s| match s.state {
            StatusState::Pending => CiVerdict::Pending,
            StatusState::Success => CiVerdict::Success,
            StatusState::Failure | StatusState::Error => CiVerdict::Failure,
        }));
    }
    if let Some(runs) = r.check_runs.get(sha) {
        states.extend(runs.values().map(|c| match c.conclusion {
            CheckConclusion::Success => CiVerdict::Success,
            CheckConclusion::Failure | CheckConclusion::Cancelled => CiVerdict::Failure,
        }));
    }
    if states.contains(&CiVerdict::Failure) {
        CiVerdict::Failure
    } else if states.contains(&CiVerdict::Pending) {
        CiVerdict::Pending
    } else if states.is_empty() {
        CiVerdict::None
    } else {
        CiVerdict::Success
    }
}

fn labels_mut(r: &mut RepoState, number: u64) -> Result<&mut BTreeSet<String>, ForgeError> {
    if let Some(pr) = r.prs.get_mut(&number) {
        Ok(&mut pr.labels)
    } else if let Some(issue) = r.issues.get_mut(&number) {
        Ok(&mut issue.labels)
    } else {
        Err(not_found(format!("issue or pull request #{number}")))
    }
}

/// Whether `number` is a PR, and who opened it.
fn thread(r: &RepoState, number: u64) -> Result<(bool, String), ForgeError> {
    if let Some(pr) = r.prs.get(&number) {
        Ok((true, pr.author.clone()))
    } else if let Some(issue) = r.issues.get(&number) {
        Ok((false, issue.author.clone()))
    } else {
        Err(not_found(format!("issue or pull request #{number}")))
    }
}

impl ForgeReads for ForgeState {
    fn get_pr_snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError> {
        self.snapshot(repo, number)
    }

    fn is_team_member(&self, org: &str, team: &str, user: &str) -> Result<bool, ForgeError> {
        self.teams
            .get(&format!("{org}/{team}"))
            .map(|members| members.contains(user))
            .ok_or_else(|| ForgeError::Config(format!("unknown team {org}/{team}")))
    }

    fn list_open_prs(&self, repo: &RepoId) -> Result<Vec<u64>, ForgeError> {
        Ok(self.repo(repo)?.prs.values().filter(|p| p.state == PrState::Open).map(|p| p.number).collect())
    }

    fn commit_graph(&self, _repo: &RepoId, heads: &[Sha]) -> Result<CommitGraph, ForgeError> {
        self.commits.subgraph(heads).map_err(|e| not_found(e.to_string()))
    }

    fn branch_head(&self, repo: &RepoId, branch: &str) -> Result<Option<Sha>, ForgeError> {
        Ok(self.repo(repo)?.branches.get(branch).cloned())
    }

    fn label_added_at(&self, repo: &RepoId, number: u64, label: &str) -> Result<Option<Timestamp>, ForgeError> {
        let r = self.repo(repo)?;
        let present = r
            .prs
            .get(&number)
            .map(|p| p.labels.contains(label))
            .or_else(|| r.issues.get(&number).map(|i| i.labels.contains(label)))
            .ok_or_else(|| not_found(format!("issue or pull request #{number}")))?;
        if !present {
            return Ok(None);
        }
        Ok(r.label_events.iter().rev().find(|e| e.number == number && e.label == label && e.added).map(|e| e.at))
    }

    fn list_milestones(&self, repo: &RepoId) -> Result<Vec<Milestone>, ForgeError> {
        Ok(self.repo(repo)?.milestones.values().cloned().collect())
    }

    fn board_cards(&self, repo: &RepoId, board: &str) -> Result<Vec<BoardCard>, ForgeError> {
        let b = self.repo(repo)?.boards.get(board).ok_or_else(|| not_found(format!("board {board}")))?;
        Ok(b.columns
            .iter()
            .flat_map(|c| {
                c.cards.iter().map(|n| BoardCard { board: board.to_owned(), column: c.name.clone(), pr_number: *n })
            })
            .collect())
    }

    fn board_column_name(&self, repo: &RepoId, board: &str, column_id: u64) -> Result<Option<String>, ForgeError> {
        let b = self.repo(repo)?.boards.get(board).ok_or_else(|| not_found(format!("board {board}")))?;
        Ok(b.columns.iter().find(|c| c.id == column_id).map(|c| c.name.clone()))
    }

    fn job_details(&self, repo: &RepoId, job_id: u64) -> Result<JobOutcome, ForgeError> {
        self.repo(repo)?
            .jobs
            .get(&job_id)
            .map(|j| j.outcome.clone())
            .ok_or_else(|| not_found(format!("job {job_id}")))
    }
}
