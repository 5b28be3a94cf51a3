//! Domain vocabulary shared by every component: repositories, refs, labels,
//! pull-request snapshots, events and actions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    GitHub,
    GitLab,
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provider::GitHub => f.write_str("github"),
            Provider::GitLab => f.write_str("gitlab"),
        }
    }
}

impl FromStr for Provider {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "github" => Ok(Provider::GitHub),
            "gitlab" => Ok(Provider::GitLab),
            other => Err(ModelError::InvalidInput(format!("unknown provider `{other}`"))),
        }
    }
}

/// A repository on a forge. Textual form is `<provider>:<owner>/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RepoId {
    provider: Provider,
    owner: String,
    name: String,
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl RepoId {
    pub fn new(provider: Provider, owner: &str, name: &str) -> Result<Self, ModelError> {
        if !valid_identifier(owner) || !valid_identifier(name) {
            return Err(ModelError::InvalidInput(format!(
                "repository owner and name must be non-empty without whitespace: `{owner}/{name}`"
            )));
        }
        Ok(RepoId { provider, owner: owner.to_owned(), name: name.to_owned() })
    }

    pub fn github(owner: &str, name: &str) -> Self {
        Self::new(Provider::GitHub, owner, name).expect("valid github repository id")
    }

    pub fn gitlab(owner: &str, name: &str) -> Self {
        Self::new(Provider::GitLab, owner, name).expect("valid gitlab repository id")
    }

    pub fn provider(&self) -> Provider {
        self.provider
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `owner/name`, without the provider.
    pub fn full_name(&self) -> String {
        format!("{}/{}", self.owner, self.name)
    }

    /// Parses `owner/name` for a known provider. GitLab namespaces may be nested,
    /// in which case everything before the last `/` is the owner.
    pub fn parse_full_name(provider: Provider, full: &str) -> Result<Self, ModelError> {
        match full.rsplit_once('/') {
            Some((owner, name)) => Self::new(provider, owner, name),
            None => Err(ModelError::InvalidInput(format!("expected owner/name, got `{full}`"))),
        }
    }
}

impl fmt::Display for RepoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}", self.provider, self.owner, self.name)
    }
}

impl FromStr for RepoId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (provider, rest) = s
            .split_once(':')
            .ok_or_else(|| ModelError::InvalidInput(format!("expected provider:owner/name, got `{s}`")))?;
        Self::parse_full_name(provider.parse()?, rest)
    }
}

impl Serialize for RepoId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepoId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A full 40-hex-digit lowercase commit id. Abbreviated ids are rejected.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sha(String);

impl Sha {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(Sha(s.to_owned()))
        } else {
            Err(ModelError::InvalidInput(format!("not a full lowercase sha: `{s}`")))
        }
    }

    pub fn from_bytes(bytes: &[u8; 20]) -> Self {
        Sha(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..8]
    }
}

impl fmt::Display for Sha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Sha {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sha::parse(s)
    }
}

impl Serialize for Sha {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Sha {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Sha::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GitRef {
    pub repo: RepoId,
    pub branch: String,
    pub sha: Sha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelCategory {
    Needs,
    Kind,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub category: LabelCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrefixes {
    pub needs: String,
    pub kind: String,
}

impl Default for LabelPrefixes {
    fn default() -> Self {
        LabelPrefixes { needs: "needs: ".to_owned(), kind: "kind: ".to_owned() }
    }
}

impl LabelPrefixes {
    pub fn classify(&self, name: &str) -> Result<Label, ModelError> {
        if name.is_empty() {
            return Err(ModelError::InvalidInput("label name is empty".to_owned()));
        }
        let category = if name.starts_with(&self.needs) {
            LabelCategory::Needs
        } else if name.starts_with(&self.kind) {
            LabelCategory::Kind
        } else {
            LabelCategory::Other
        };
        Ok(Label { name: name.to_owned(), category })
    }
}

/// Classifies with a custom needs-prefix and the default kind-prefix.
pub fn classify_label(name: &str, needs_prefix: &str) -> Result<Label, ModelError> {
    LabelPrefixes { needs: needs_prefix.to_owned(), ..LabelPrefixes::default() }.classify(name)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Milestone {
    pub number: u64,
    pub title: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiVerdict {
    Pending,
    Success,
    Failure,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrState {
    Open,
    Closed,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mergeability {
    Clean,
    Conflicting,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrSnapshot {
    pub number: u64,
    pub title: String,
    pub author: String,
    pub head: GitRef,
    pub base: GitRef,
    pub labels: BTreeSet<Label>,
    pub milestone: Option<Milestone>,
    pub assignees: BTreeSet<String>,
    pub approved_reviews: u32,
    pub changes_requested_reviews: u32,
    pub ci_verdict: CiVerdict,
    pub state: PrState,
    pub mergeable: Mergeability,
    /// Present once the PR is merged.
    pub merge_commit: Option<Sha>,
}

impl PrSnapshot {
    pub fn has_label(&self, name: &str) -> bool {
        self.labels.iter().any(|l| l.name == name)
    }

    pub fn has_category(&self, category: LabelCategory) -> bool {
        self.labels.iter().any(|l| l.category == category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Success,
    Failure,
    Canceled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStatus {
    Success,
    Failure,
    Canceled,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PushedCommit {
    pub sha: Sha,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunnerResult {
    Reduced { reduced_case: String },
    Failed { diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventPayload {
    PrOpened { number: u64 },
    PrSynchronized { number: u64 },
    PrClosed { number: u64, merged: bool },
    BaseBranchPushed { branch: String, sha: Sha },
    CommentPosted { number: u64, comment_id: u64, author: String, body: String, on_pr: bool },
    CommentEdited { number: u64, comment_id: u64, author: String, body: String, on_pr: bool },
    IssueOpened { number: u64, author: String, body: String },
    PipelineFinished { pipeline_id: u64, sha: Sha, branch: String, status: PipelineStatus },
    JobFinished { job_id: u64, job_name: String, sha: Sha, branch: String, status: JobStatus },
    CardRemoved { board: String, column_id: u64, pr_number: u64, actor: String },
    PushToBranch { branch: String, before: Option<Sha>, after: Sha, commits: Vec<PushedCommit>, pusher: String },
    ClockTick { schedule: String, now: Timestamp },
    RunnerCompleted { token: String, result: RunnerResult },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PrOpened,
    PrSynchronized,
    PrClosed,
    BaseBranchPushed,
    CommentPosted,
    CommentEdited,
    IssueOpened,
    PipelineFinished,
    JobFinished,
    CardRemoved,
    PushToBranch,
    ClockTick,
    RunnerCompleted,
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::PrOpened { .. } => EventKind::PrOpened,
            EventPayload::PrSynchronized { .. } => EventKind::PrSynchronized,
            EventPayload::PrClosed { .. } => EventKind::PrClosed,
            EventPayload::BaseBranchPushed { .. } => EventKind::BaseBranchPushed,
            EventPayload::CommentPosted { .. } => EventKind::CommentPosted,
            EventPayload::CommentEdited { .. } => EventKind::CommentEdited,
            EventPayload::IssueOpened { .. } => EventKind::IssueOpened,
            EventPayload::PipelineFinished { .. } => EventKind::PipelineFinished,
            EventPayload::JobFinished { .. } => EventKind::JobFinished,
            EventPayload::CardRemoved { .. } => EventKind::CardRemoved,
            EventPayload::PushToBranch { .. } => EventKind::PushToBranch,
            EventPayload::ClockTick { .. } => EventKind::ClockTick,
            EventPayload::RunnerCompleted { .. } => EventKind::RunnerCompleted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub delivery_id: String,
    pub repo: RepoId,
    pub payload: EventPayload,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckConclusion {
    Success,
    Failure,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusState {
    Pending,
    Success,
    Failure,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub url: String,
}

/// A commit in the toy commit graph. Carried by pushes so the receiving forge
/// learns about objects synthesized by the bot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Commit {
    pub sha: Sha,
    pub parents: Vec<Sha>,
    pub files: BTreeSet<String>,
    pub message: String,
}

/// A state-changing request against a forge. The only way the bot affects the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum Action {
    AddLabel { repo: RepoId, number: u64, label: String },
    RemoveLabel { repo: RepoId, number: u64, label: String },
    PostComment { repo: RepoId, number: u64, body: String },
    UpdateComment { repo: RepoId, comment_id: u64, body: String },
    ClosePr { repo: RepoId, number: u64 },
    SetMilestone { repo: RepoId, number: u64, milestone: u64 },
    MergePr { repo: RepoId, number: u64, message: String, signed: bool },
    PushBranch { repo: RepoId, branch: String, source: Sha, force: bool, objects: Vec<Commit> },
    DeleteBranch { repo: RepoId, branch: String },
    CreateCheckRun {
        repo: RepoId,
        head_sha: Sha,
        name: String,
        conclusion: CheckConclusion,
        summary: String,
        details_url: Option<String>,
        links: Vec<Link>,
    },
    SetCommitStatus {
        repo: RepoId,
        sha: Sha,
        context: String,
        state: StatusState,
        description: String,
        target_url: Option<String>,
    },
    AddCardToColumn { repo: RepoId, board: String, column: String, pr_number: u64 },
    MoveCard { repo: RepoId, board: String, pr_number: u64, column: String },
    DispatchJob { repo: RepoId, token: String, script: String },
}

impl Action {
    pub fn repo(&self) -> &RepoId {
        match self {
            Action::AddLabel { repo, .. }
            | Action::RemoveLabel { repo, .. }
            | Action::PostComment { repo, .. }
            | Action::UpdateComment { repo, .. }
            | Action::ClosePr { repo, .. }
            | Action::SetMilestone { repo, .. }
            | Action::MergePr { repo, .. }
            | Action::PushBranch { repo, .. }
            | Action::DeleteBranch { repo, .. }
            | Action::CreateCheckRun { repo, .. }
            | Action::SetCommitStatus { repo, .. }
            | Action::AddCardToColumn { repo, .. }
            | Action::MoveCard { repo, .. }
            | Action::DispatchJob { repo, .. } => repo,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Action::AddLabel { .. } => "AddLabel",
            Action::RemoveLabel { .. } => "RemoveLabel",
            Action::PostComment { .. } => "PostComment",
            Action::UpdateComment { .. } => "UpdateComment",
            Action::ClosePr { .. } => "ClosePr",
            Action::SetMilestone { .. } => "SetMilestone",
            Action::MergePr { .. } => "MergePr",
            Action::PushBranch { .. } => "PushBranch",
            Action::DeleteBranch { .. } => "DeleteBranch",
            Action::CreateCheckRun { .. } => "CreateCheckRun",
            Action::SetCommitStatus { .. } => "SetCommitStatus",
            Action::AddCardToColumn { .. } => "AddCardToColumn",
            Action::MoveCard { .. } => "MoveCard",
            Action::DispatchJob { .. } => "DispatchJob",
        }
    }

    /// One-line human readable rendering used by transcripts and golden files.
    pub fn summary(&self) -> String {
        match self {
            Action::AddLabel { repo, number, label } => format!("AddLabel {repo}#{number} {label:?}"),
            Action::RemoveLabel { repo, number, label } => format!("RemoveLabel {repo}#{number} {label:?}"),
            Action::PostComment { repo, number, body } => {
                format!("PostComment {repo}#{number} {:?}", first_line(body))
            }
            Action::UpdateComment { repo, comment_id, body } => {
                format!("UpdateComment {repo} comment {comment_id} {:?}", first_line(body))
            }
            Action::ClosePr { repo, number } => format!("ClosePr {repo}#{number}"),
            Action::SetMilestone { repo, number, milestone } => {
                format!("SetMilestone {repo}#{number} milestone={milestone}")
            }
            Action::MergePr { repo, number, message, signed } => {
                format!("MergePr {repo}#{number} signed={signed} {:?}", first_line(message))
            }
            Action::PushBranch { repo, branch, source, force, .. } => {
                format!("PushBranch {repo} {branch} {} force={force}", source.short())
            }
            Action::DeleteBranch { repo, branch } => format!("DeleteBranch {repo} {branch}"),
            Action::CreateCheckRun { repo, head_sha, name, conclusion, .. } => {
                format!("CreateCheckRun {repo} {} {name:?} {conclusion:?}", head_sha.short())
            }
            Action::SetCommitStatus { repo, sha, context, state, .. } => {
                format!("SetCommitStatus {repo} {} {context:?} {state:?}", sha.short())
            }
            Action::AddCardToColumn { repo, board, column, pr_number } => {
                format!("AddCardToColumn {repo} {board:?}/{column:?} #{pr_number}")
            }
            Action::MoveCard { repo, board, pr_number, column } => {
                format!("MoveCard {repo} {board:?}/{column:?} #{pr_number}")
            }
            Action::DispatchJob { repo, token, .. } => format!("DispatchJob {repo} {token}"),
        }
    }
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

/// A finished CI job as seen on the mirror.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: u64,
    pub job_name: String,
    pub status: JobStatus,
    pub log: String,
    pub web_url: String,
    #[serde(default)]
    pub artifact_links: Vec<Link>,
    /// Script reproducing the job locally, when the forge knows it.
    #[serde(default)]
    pub script: Option<String>,
}

/// A card on a project board tracking one pull request.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoardCard {
    pub board: String,
    pub column: String,
    pub pr_number: u64,
}
