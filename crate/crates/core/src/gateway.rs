//! Webhook ingestion: authentication, redelivery dedup and normalization of
//! provider payloads into [`Event`]s.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Mutex;

use hmac::{Hmac, Mac};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::model::{
    Event, EventPayload, JobStatus, PipelineStatus, Provider, PushedCommit, RepoId, RunnerResult, Sha,
    Timestamp,
};

type HmacSha256 = Hmac<Sha256>;

pub const GITHUB_SIGNATURE_HEADER: &str = "x-hub-signature-256";
pub const GITHUB_EVENT_HEADER: &str = "x-github-event";
pub const GITHUB_DELIVERY_HEADER: &str = "x-github-delivery";
pub const GITLAB_TOKEN_HEADER: &str = "x-gitlab-token";
pub const GITLAB_EVENT_HEADER: &str = "x-gitlab-event";
pub const GITLAB_DELIVERY_HEADER: &str = "x-gitlab-event-uuid";

pub const DEFAULT_LEDGER_CAPACITY: usize = 4096;

/// Where a delivery came in. Runner completions share the webhook path but
/// are not forge events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    GitHub,
    GitLab,
    Runner,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDelivery {
    pub channel: Channel,
    /// Header names are stored lowercased.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
    pub received_at: Timestamp,
}

impl RawDelivery {
    pub fn new<K: AsRef<str>, V: Into<String>>(
        channel: Channel,
        headers: impl IntoIterator<Item = (K, V)>,
        body: Vec<u8>,
        received_at: Timestamp,
    ) -> Self {
        let headers = headers.into_iter().map(|(k, v)| (k.as_ref().to_ascii_lowercase(), v.into())).collect();
        RawDelivery { channel, headers, body, received_at }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn event_kind(&self) -> Option<&str> {
        match self.channel {
            Channel::GitHub => self.header(GITHUB_EVENT_HEADER),
            Channel::GitLab => self.header(GITLAB_EVENT_HEADER),
            Channel::Runner => Some("runner_completion"),
        }
    }

    /// Provider delivery id, falling back to a digest of the body.
    pub fn delivery_id(&self) -> String {
        let header = match self.channel {
            Channel::GitHub => self.header(GITHUB_DELIVERY_HEADER),
            Channel::GitLab => self.header(GITLAB_DELIVERY_HEADER),
            Channel::Runner => None,
        };
        match header {
            Some(id) if !id.is_empty() => id.to_owned(),
            _ => {
                let digest = Sha256::digest(&self.body);
                format!("{:?}-{}", self.channel, hex::encode(&digest[..16])).to_lowercase()
            }
        }
    }
}

/// `sha256=<hex>` signature GitHub sends for `body` under `secret`.
pub fn sign(secret: &[u8], body: &[u8]) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(body);
    format!("sha256={}", hex::encode(mac.finalize().into_bytes()))
}

/// Checks a GitHub `X-Hub-Signature-256` header. Malformed headers are `false`.
pub fn verify_signature(secret: &[u8], body: &[u8], signature_header: &str) -> bool {
    if secret.is_empty() {
        return false;
    }
    let Some(hex_digest) = signature_header.strip_prefix("sha256=") else {
        return false;
    };
    let Ok(provided) = hex::decode(hex_digest) else {
        return false;
    };
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(body);
    mac.verify_slice(&provided).is_ok()
}

/// GitLab sends the shared secret verbatim in `X-Gitlab-Token`.
pub fn verify_token(secret: &[u8], token_header: &str) -> bool {
    !secret.is_empty() && bool::from(secret.ct_eq(token_header.as_bytes()))
}

/// Bounded set of recently seen delivery ids with insertion-order eviction.
#[derive(Debug)]
pub struct DeliveryLedger {
    seen: HashSet<String>,
    order: VecDeque<String>,
    capacity: usize,
}

impl DeliveryLedger {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ledger capacity must be positive");
        DeliveryLedger { seen: HashSet::new(), order: VecDeque::new(), capacity }
    }

    /// Records `id` and returns true if it was not among the last `capacity` ids.
    pub fn admit(&mut self, id: &str) -> bool {
        if self.seen.contains(id) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(evicted) = self.order.pop_front() {
                self.seen.remove(&evicted);
            }
        }
        self.seen.insert(id.to_owned());
        self.order.push_back(id.to_owned());
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Default for DeliveryLedger {
    fn default() -> Self {
        Self::new(DEFAULT_LEDGER_CAPACITY)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot decode {channel:?} `{kind}` delivery: {message}")]
pub struct DecodeError {
    pub channel: Channel,
    pub kind: String,
    pub message: String,
}

#[derive(Deserialize)]
struct GhUser {
    login: String,
}

#[derive(Deserialize)]
struct GhRepository {
    full_name: String,
}

#[derive(Deserialize)]
struct GhPullRequest {
    #[serde(default)]
    merged: bool,
}

#[derive(Deserialize)]
struct GhPullRequestEvent {
    action: String,
    number: u64,
    pull_request: GhPullRequest,
    repository: GhRepository,
    #[serde(default)]
    changes: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct GhIssue {
    number: u64,
    #[serde(default)]
    pull_request: Option<serde_json::Value>,
    #[serde(default)]
    body: Option<String>,
    user: GhUser,
}

#[derive(Deserialize)]
struct GhComment {
    id: u64,
    #[serde(default)]
    body: String,
    user: GhUser,
}

#[derive(Deserialize)]
struct GhIssueCommentEvent {
    action: String,
    issue: GhIssue,
    comment: GhComment,
    repository: GhRepository,
}

#[derive(Deserialize)]
struct GhIssuesEvent {
    action: String,
    issue: GhIssue,
    repository: GhRepository,
}

#[derive(Deserialize)]
struct GhPushCommit {
    id: String,
    message: String,
}

#[derive(Deserialize)]
struct GhPusher {
    name: String,
}

#[derive(Deserialize)]
struct GhPushEvent {
    #[serde(rename = "ref")]
    git_ref: String,
    before: String,
    after: String,
    #[serde(default)]
    deleted: bool,
    #[serde(default)]
    commits: Vec<GhPushCommit>,
    pusher: GhPusher,
    repository: GhRepository,
}

#[derive(Deserialize)]
struct GhProjectCard {
    column_id: u64,
    #[serde(default)]
    content_url: Option<String>,
    project_url: String,
}

#[derive(Deserialize)]
struct GhProjectCardEvent {
    action: String,
    project_card: GhProjectCard,
    repository: GhRepository,
    sender: GhUser,
}

#[derive(Deserialize)]
struct GlProject {
    path_with_namespace: String,
}

#[derive(Deserialize)]
struct GlPipelineAttributes {
    id: u64,
    sha: String,
    #[serde(rename = "ref")]
    git_ref: String,
    status: String,
}

#[derive(Deserialize)]
struct GlPipelineEvent {
    object_attributes: GlPipelineAttributes,
    project: GlProject,
}

#[derive(Deserialize)]
struct GlJobEvent {
    build_id: u64,
    build_name: String,
    build_status: String,
    sha: String,
    #[serde(rename = "ref")]
    git_ref: String,
    #[serde(default)]
    project: Option<GlProject>,
    #[serde(default)]
    project_name: Option<String>,
}

#[derive(Deserialize)]
struct RunnerCompletion {
    token: String,
    repo: String,
    #[serde(flatten)]
    result: RunnerResult,
}

fn all_zero(sha: &str) -> bool {
    sha.bytes().all(|b| b == b'0')
}

fn last_segment_number(url: &str) -> Option<u64> {
    url.trim_end_matches('/').rsplit('/').next()?.parse().ok()
}

/// Pure mapping from a delivery to an event. `Ok(None)` for kinds the bot
/// does not handle.
pub fn decode_event(delivery: &RawDelivery) -> Result<Option<Event>, DecodeError> {
    let kind = delivery.event_kind().unwrap_or("").to_owned();
    let fail = |message: String| DecodeError { channel: delivery.channel, kind: kind.clone(), message };
    let body = &delivery.body;
    let delivery_id = delivery.delivery_id();
    let sha = |s: &str| Sha::parse(s).map_err(|e| fail(e.to_string()));
    let github_repo = |r: &GhRepository| RepoId::parse_full_name(Provider::GitHub, &r.full_name).map_err(|e| fail(e.to_string()));

    let decoded: Option<(RepoId, EventPayload)> = match (delivery.channel, kind.as_str()) {
        (Channel::GitHub, "pull_request") => {
            let ev: GhPullRequestEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = github_repo(&ev.repository)?;
            let number = ev.number;
            let payload = match ev.action.as_str() {
                "opened" | "reopened" => Some(EventPayload::PrOpened { number }),
                "synchronize" => Some(EventPayload::PrSynchronized { number }),
                "closed" => Some(EventPayload::PrClosed { number, merged: ev.pull_request.merged }),
                // A retargeted PR needs a fresh merge candidate.
                "edited" if ev.changes.as_ref().is_some_and(|c| c.get("base").is_some()) => {
                    Some(EventPayload::PrSynchronized { number })
                }
                _ => None,
            };
            payload.map(|p| (repo, p))
        }
        (Channel::GitHub, "issue_comment") => {
            let ev: GhIssueCommentEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = github_repo(&ev.repository)?;
            let number = ev.issue.number;
            let on_pr = ev.issue.pull_request.is_some();
            let (comment_id, author, body) = (ev.comment.id, ev.comment.user.login, ev.comment.body);
            match ev.action.as_str() {
                "created" => Some((repo, EventPayload::CommentPosted { number, comment_id, author, body, on_pr })),
                "edited" => Some((repo, EventPayload::CommentEdited { number, comment_id, author, body, on_pr })),
                _ => None,
            }
        }
        (Channel::GitHub, "issues") => {
            let ev: GhIssuesEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = github_repo(&ev.repository)?;
            (ev.action == "opened").then(|| {
                (
                    repo,
                    EventPayload::IssueOpened {
                        number: ev.issue.number,
                        author: ev.issue.user.login,
                        body: ev.issue.body.unwrap_or_default(),
                    },
                )
            })
        }
        (Channel::GitHub, "push") => {
            let ev: GhPushEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = github_repo(&ev.repository)?;
            match ev.git_ref.strip_prefix("refs/heads/") {
                Some(branch) if !ev.deleted && !all_zero(&ev.after) => {
                    let before = if all_zero(&ev.before) { None } else { Some(sha(&ev.before)?) };
                    let commits = ev
                        .commits
                        .iter()
                        .map(|c| Ok(PushedCommit { sha: sha(&c.id)?, message: c.message.clone() }))
                        .collect::<Result<Vec<_>, DecodeError>>()?;
                    Some((
                        repo,
                        EventPayload::PushToBranch {
                            branch: branch.to_owned(),
                            before,
                            after: sha(&ev.after)?,
                            commits,
                            pusher: ev.pusher.name,
                        },
                    ))
                }
                _ => None,
            }
        }
        (Channel::GitHub, "project_card") => {
            let ev: GhProjectCardEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = github_repo(&ev.repository)?;
            let card = ev.project_card;
            match (ev.action.as_str(), card.content_url.as_deref().and_then(last_segment_number)) {
                ("deleted", Some(pr_number)) => {
                    let board = card
                        .project_url
                        .trim_end_matches('/')
                        .rsplit('/')
                        .next()
                        .unwrap_or_default()
                        .to_owned();
                    Some((
                        repo,
                        EventPayload::CardRemoved { board, column_id: card.column_id, pr_number, actor: ev.sender.login },
                    ))
                }
                _ => None,
            }
        }
        (Channel::GitLab, "Pipeline Hook") => {
            let ev: GlPipelineEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo = RepoId::parse_full_name(Provider::GitLab, &ev.project.path_with_namespace)
                .map_err(|e| fail(e.to_string()))?;
            let attrs = ev.object_attributes;
            let status = match attrs.status.as_str() {
                "success" => Some(PipelineStatus::Success),
                "failed" => Some(PipelineStatus::Failure),
                "canceled" => Some(PipelineStatus::Canceled),
                _ => None,
            };
            match status {
                Some(status) => Some((
                    repo,
                    EventPayload::PipelineFinished {
                        pipeline_id: attrs.id,
                        sha: sha(&attrs.sha)?,
                        branch: attrs.git_ref,
                        status,
                    },
                )),
                None => None,
            }
        }
        (Channel::GitLab, "Job Hook") => {
            let ev: GlJobEvent = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let path = match (&ev.project, &ev.project_name) {
                (Some(p), _) => p.path_with_namespace.clone(),
                (None, Some(name)) => name.split('/').map(str::trim).collect::<Vec<_>>().join("/"),
                (None, None) => return Err(fail("job payload names no project".to_owned())),
            };
            let repo = RepoId::parse_full_name(Provider::GitLab, &path).map_err(|e| fail(e.to_string()))?;
            let status = match ev.build_status.as_str() {
                "success" => Some(JobStatus::Success),
                "failed" => Some(JobStatus::Failure),
                "canceled" => Some(JobStatus::Canceled),
                _ => None,
            };
            match status {
                Some(status) => Some((
                    repo,
                    EventPayload::JobFinished {
                        job_id: ev.build_id,
                        job_name: ev.build_name,
                        sha: sha(&ev.sha)?,
                        branch: ev.git_ref,
                        status,
                    },
                )),
                None => None,
            }
        }
        (Channel::Runner, _) => {
            let ev: RunnerCompletion = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
            let repo: RepoId = ev.repo.parse().map_err(|e: crate::model::ModelError| fail(e.to_string()))?;
            Some((repo, EventPayload::RunnerCompleted { token: ev.token, result: ev.result }))
        }
        _ => None,
    };
    Ok(decoded.map(|(repo, payload)| Event { delivery_id, repo, payload }))
}

#[derive(Debug, PartialEq, Eq)]
pub enum Admission {
    Accepted(Event),
    Duplicate,
    Ignored,
    Unauthorized,
}

#[derive(Debug, Clone, Default)]
pub struct GatewaySecrets {
    pub github_webhook: Vec<u8>,
    pub gitlab_token: Vec<u8>,
    pub runner: Vec<u8>,
}

/// The gateway proper: authentication, decoding, repository filtering and dedup.
#[derive(Debug)]
pub struct Gateway {
    secrets: GatewaySecrets,
    repos: BTreeSet<RepoId>,
    ledger: Mutex<DeliveryLedger>,
}

impl Gateway {
    pub fn new(secrets: GatewaySecrets, repos: impl IntoIterator<Item = RepoId>, capacity: usize) -> Self {
        Gateway { secrets, repos: repos.into_iter().collect(), ledger: Mutex::new(DeliveryLedger::new(capacity)) }
    }

    pub fn authenticate(&self, delivery: &RawDelivery) -> bool {
        match delivery.channel {
            Channel::GitHub => delivery
                .header(GITHUB_SIGNATURE_HEADER)
                .is_some_and(|h| verify_signature(&self.secrets.github_webhook, &delivery.body, h)),
            Channel::GitLab => delivery
                .header(GITLAB_TOKEN_HEADER)
                .is_some_and(|h| verify_token(&self.secrets.gitlab_token, h)),
            Channel::Runner => delivery
                .header(GITHUB_SIGNATURE_HEADER)
                .is_some_and(|h| verify_signature(&self.secrets.runner, &delivery.body, h)),
        }
    }

    /// Decodes and drops events for repositories outside the configuration.
    pub fn decode(&self, delivery: &RawDelivery) -> Result<Option<Event>, DecodeError> {
        let event = decode_event(delivery)?;
        Ok(event.filter(|e| self.repos.contains(&e.repo)))
    }

    pub fn admit(&self, delivery_id: &str) -> bool {
        self.ledger.lock().expect("ledger lock poisoned").admit(delivery_id)
    }

    /// Full ingestion path for one delivery.
    pub fn ingest(&self, delivery: &RawDelivery) -> Result<Admission, DecodeError> {
        if !self.authenticate(delivery) {
            tracing::warn!(channel = ?delivery.channel, "rejecting unauthenticated delivery");
            return Ok(Admission::Unauthorized);
        }
        let Some(event) = self.decode(delivery)? else {
            tracing::info!(channel = ?delivery.channel, kind = ?delivery.event_kind(), "ignoring delivery");
            return Ok(Admission::Ignored);
        };
        if !self.admit(&event.delivery_id) {
            tracing::info!(delivery = %event.delivery_id, "dropping redelivery");
            return Ok(Admission::Duplicate);
        }
        Ok(Admission::Accepted(event))
    }
}
