//! HTTP adapter for GitHub (GraphQL reads, REST mutations) and GitLab (REST).
//!
//! Every mutation checks current state first so repeated actions report NOOP.
//! Transport failures are retried with [`RetryPolicy`].

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ActionResult, ForgeError, ForgePort, ForgeReads, MembershipCache, RetryPolicy};
use crate::clock::{Clock, SystemClock};
use crate::graph::CommitGraph;
use crate::model::{
    Action, BoardCard, CheckConclusion, CiVerdict, Commit, GitRef, JobOutcome, JobStatus, LabelPrefixes, Link, Mergeability,
    Milestone, PrSnapshot, PrState, Provider, RepoId, Sha, StatusState, Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    /// Raw body; JSON for API calls, plain text for job traces.
    pub body: String,
}

impl HttpResponse {
    fn json(&self) -> Result<Value, ForgeError> {
        if self.body.trim().is_empty() {
            return Ok(Value::Null);
        }
        serde_json::from_str(&self.body)
            .map_err(|e| ForgeError::Transport { message: format!("invalid JSON from forge: {e}"), retryable: false })
    }

    fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// One HTTP exchange. Authentication headers are added by the implementation.
pub trait Transport: Send + Sync {
    fn send(&self, provider: Provider, request: &HttpRequest) -> Result<HttpResponse, ForgeError>;
}

/// Real network transport.
pub struct UreqTransport {
    agent: ureq::Agent,
    github_token: String,
    gitlab_token: String,
}

impl UreqTransport {
    pub fn new(github_token: String, gitlab_token: String) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).user_agent("forgebot").build();
        UreqTransport { agent, github_token, gitlab_token }
    }
}

impl Transport for UreqTransport {
    fn send(&self, provider: Provider, request: &HttpRequest) -> Result<HttpResponse, ForgeError> {
        let mut req = self.agent.request(&request.method, &request.url);
        req = match provider {
            Provider::GitHub => req
                .set("Authorization", &format!("Bearer {}", self.github_token))
                .set("Accept", "application/vnd.github+json"),
            Provider::GitLab => req.set("PRIVATE-TOKEN", &self.gitlab_token),
        };
        let result = match &request.body {
            Some(body) => req.set("Content-Type", "application/json").send_string(&body.to_string()),
            None => req.call(),
        };
        match result {
            Ok(resp) => {
                let status = resp.status();
                let body = resp
                    .into_string()
                    .map_err(|e| ForgeError::Transport { message: e.to_string(), retryable: true })?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if status >= 500 || status == 429 {
                    Err(ForgeError::Transport { message: format!("HTTP {status}: {body}"), retryable: true })
                } else {
                    Ok(HttpResponse { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(ForgeError::Transport { message: t.to_string(), retryable: true }),
        }
    }
}

/// A recorded exchange, used to replay forge traffic offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub provider: Provider,
    pub request: HttpRequest,
    pub response: HttpResponse,
}

/// Serves recorded exchanges. Each request consumes the first unused exchange
/// with the same provider, method and URL (and body, when one was recorded).
#[derive(Debug, Default)]
pub struct ReplayTransport {
    pending: Mutex<VecDeque<Exchange>>,
    seen: Mutex<Vec<HttpRequest>>,
}

impl ReplayTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayTransport { pending: Mutex::new(exchanges.into()), seen: Mutex::new(Vec::new()) }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.seen.lock().expect("replay lock").clone()
    }

    pub fn unused(&self) -> Vec<Exchange> {
        self.pending.lock().expect("replay lock").iter().cloned().collect()
    }
}

impl Transport for ReplayTransport {
    fn send(&self, provider: Provider, request: &HttpRequest) -> Result<HttpResponse, ForgeError> {
        self.seen.lock().expect("replay lock").push(request.clone());
        let mut pending = self.pending.lock().expect("replay lock");
        let position = pending.iter().position(|e| {
            e.provider == provider
                && e.request.method == request.method
                && e.request.url == request.url
                && (e.request.body.is_none() || e.request.body == request.body)
        });
        match position {
            Some(i) => Ok(pending.remove(i).expect("index in range").response),
            None => Err(ForgeError::Transport {
                message: format!("no recorded exchange for {} {}", request.method, request.url),
                retryable: false,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveSettings {
    pub github_api: String,
    pub gitlab_api: String,
    /// Login of the bot account, used for comment idempotency.
    pub bot_login: String,
    pub runner_url: Option<String>,
    pub label_prefixes: LabelPrefixes,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            github_api: "https://api.github.com".into(),
            gitlab_api: "https://gitlab.com/api/v4".into(),
            bot_login: "coqbot".into(),
            runner_url: None,
            label_prefixes: LabelPrefixes::default(),
        }
    }
}

pub struct LiveForge {
    settings: LiveSettings,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    sleep: Arc<dyn Fn(Duration) + Send + Sync>,
    clock: Arc<dyn Clock>,
    membership: MembershipCache,
    dispatched: Mutex<HashSet<String>>,
}

const SNAPSHOT_QUERY: &str = "query($owner: String!, $name: String!, $number: Int!) { repository(owner: $owner, name: $name) { pullRequest(number: $number) { number title state merged author { login } headRefName headRefOid baseRefName baseRefOid mergeable mergeCommit { oid } labels(first: 100) { nodes { name } } milestone { number title description } assignees(first: 100) { nodes { login } } approved: reviews(states: APPROVED) { totalCount } changesRequested: reviews(states: CHANGES_REQUESTED) { totalCount } commits(last: 1) { nodes { commit { statusCheckRollup { state } } } } } } }";

fn enc(segment: &str) -> String {
    url::form_urlencoded::byte_serialize(segment.as_bytes()).collect::<String>().replace('+', "%20")
}

fn str_at<'a>(v: &'a Value, pointer: &str) -> Result<&'a str, ForgeError> {
    v.pointer(pointer)
        .and_then(Value::as_str)
        .ok_or_else(|| ForgeError::Transport { message: format!("missing field {pointer}"), retryable: false })
}

fn u64_at(v: &Value, pointer: &str) -> Result<u64, ForgeError> {
    v.pointer(pointer)
        .and_then(Value::as_u64)
        .ok_or_else(|| ForgeError::Transport { message: format!("missing field {pointer}"), retryable: false })
}

fn sha_at(v: &Value, pointer: &str) -> Result<Sha, ForgeError> {
    Sha::parse(str_at(v, pointer)?).map_err(|e| ForgeError::Transport { message: e.to_string(), retryable: false })
}

fn rejected(resp: &HttpResponse) -> ForgeError {
    let message = serde_json::from_str::<Value>(&resp.body)
        .ok()
        .and_then(|v| v.get("message").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| resp.body.clone());
    ForgeError::Rejected { status: resp.status, message }
}

impl LiveForge {
    pub fn new(settings: LiveSettings, transport: Arc<dyn Transport>) -> Self {
        LiveForge {
            settings,
            transport,
            retry: RetryPolicy::default(),
            sleep: Arc::new(std::thread::sleep),
            clock: Arc::new(SystemClock),
            membership: MembershipCache::default(),
            dispatched: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleep: Arc<dyn Fn(Duration) + Send + Sync>) -> Self {
        self.retry = retry;
        self.sleep = sleep;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn send(&self, provider: Provider, method: &str, url: String, body: Option<Value>) -> Result<HttpResponse, ForgeError> {
        let request = HttpRequest { method: method.to_owned(), url, body };
        let sleep = Arc::clone(&self.sleep);
        self.retry.run(&|d| sleep(d), || self.transport.send(provider, &request))
    }

    fn gh(&self, method: &str, path: &str, body: Option<Value>) -> Result<HttpResponse, ForgeError> {
        self.send(Provider::GitHub, method, format!("{}{path}", self.settings.github_api), body)
    }

    fn gl(&self, method: &str, path: &str, body: Option<Value>) -> Result<HttpResponse, ForgeError> {
        self.send(Provider::GitLab, method, format!("{}{path}", self.settings.gitlab_api), body)
    }

    /// GET returning JSON, or `None` on 404.
    fn get_json(&self, provider: Provider, path: &str) -> Result<Option<Value>, ForgeError> {
        let resp = match provider {
            Provider::GitHub => self.gh("GET", path, None)?,
            Provider::GitLab => self.gl("GET", path, None)?,
        };
        match resp.status {
            404 => Ok(None),
            _ if resp.ok() => resp.json().map(Some),
            _ => Err(rejected(&resp)),
        }
    }

    fn expect_ok(resp: HttpResponse) -> Result<HttpResponse, ForgeError> {
        if resp.ok() {
            Ok(resp)
        } else {
            Err(rejected(&resp))
        }
    }

    fn repo_path(repo: &RepoId) -> String {
        match repo.provider() {
            Provider::GitHub => format!("/repos/{}", repo.full_name()),
            Provider::GitLab => format!("/projects/{}", enc(&repo.full_name())),
        }
    }

    fn github_only(repo: &RepoId) -> Result<(), ForgeError> {
        if repo.provider() == Provider::GitHub {
            Ok(())
        } else {
            Err(ForgeError::Config(format!("{repo}: operation only supported on GitHub")))
        }
    }

    fn compare(&self, repo: &RepoId, base: &Sha, head: &Sha) -> Result<(Sha, BTreeSet<String>), ForgeError> {
        let v = self
            .get_json(Provider::GitHub, &format!("{}/compare/{base}...{head}", Self::repo_path(repo)))?
            .ok_or_else(|| ForgeError::NotFound(format!("comparison {base}...{head}")))?;
        let merge_base = sha_at(&v, "/merge_base_commit/sha")?;
        let files = v
            .get("files")
            .and_then(Value::as_array)
            .map(|fs| fs.iter().filter_map(|f| f.get("filename")?.as_str().map(str::to_owned)).collect())
            .unwrap_or_default();
        Ok((merge_base, files))
    }

    fn issue_labels(&self, repo: &RepoId, number: u64) -> Result<BTreeSet<String>, ForgeError> {
        let v = self
            .get_json(Provider::GitHub, &format!("{}/issues/{number}/labels?per_page=100", Self::repo_path(repo)))?
            .ok_or_else(|| ForgeError::NotFound(format!("issue #{number}")))?;
        Ok(v.as_array()
            .map(|ls| ls.iter().filter_map(|l| l.get("name")?.as_str().map(str::to_owned)).collect())
            .unwrap_or_default())
    }

    fn project_id(&self, repo: &RepoId, board: &str) -> Result<u64, ForgeError> {
        let v = self
            .get_json(Provider::GitHub, &format!("{}/projects?state=open&per_page=100", Self::repo_path(repo)))?
            .unwrap_or(Value::Null);
        v.as_array()
            .into_iter()
            .flatten()
            .find(|p| p.get("name").and_then(Value::as_str) == Some(board) || p.get("id").map(|i| i.to_string()) == Some(board.to_owned()))
            .and_then(|p| p.get("id").and_then(Value::as_u64))
            .ok_or_else(|| ForgeError::NotFound(format!("board {board}")))
    }

    /// `(column id, column name, [(card id, pr number)])` for every column.
    fn board(&self, repo: &RepoId, board: &str) -> Result<Vec<(u64, String, Vec<(u64, u64)>)>, ForgeError> {
        let project = self.project_id(repo, board)?;
        let columns = self.get_json(Provider::GitHub, &format!("/projects/{project}/columns"))?.unwrap_or(Value::Null);
        let mut out = Vec::new();
        for column in columns.as_array().into_iter().flatten() {
            let id = u64_at(column, "/id")?;
            let name = str_at(column, "/name")?.to_owned();
            let cards = self.get_json(Provider::GitHub, &format!("/projects/columns/{id}/cards"))?.unwrap_or(Value::Null);
            let mut entries = Vec::new();
            for card in cards.as_array().into_iter().flatten() {
                let content = card.get("content_url").and_then(Value::as_str).unwrap_or_default();
                if let Some(n) = content.rsplit('/').next().and_then(|n| n.parse().ok()) {
                    entries.push((u64_at(card, "/id")?, n));
                }
            }
            out.push((id, name, entries));
        }
        Ok(out)
    }

    fn apply_inner(&self, action: &Action) -> Result<ActionResult, ForgeError> {
        match action {
            Action::AddLabel { repo, number, label } => {
                Self::github_only(repo)?;
                if self.issue_labels(repo, *number)?.contains(label) {
                    return Ok(ActionResult::noop("label already present"));
                }
                Self::expect_ok(self.gh(
                    "POST",
                    &format!("{}/issues/{number}/labels", Self::repo_path(repo)),
                    Some(json!({ "labels": [label] })),
                )?)?;
                Ok(ActionResult::applied())
            }
            Action::RemoveLabel { repo, number, label } => {
                Self::github_only(repo)?;
                if !self.issue_labels(repo, *number)?.contains(label) {
                    return Ok(ActionResult::noop("label not present"));
                }
                Self::expect_ok(self.gh(
                    "DELETE",
                    &format!("{}/issues/{number}/labels/{}", Self::repo_path(repo), enc(label)),
                    None,
                )?)?;
                Ok(ActionResult::applied())
            }
            Action::PostComment { repo, number, body } => {
                Self::github_only(repo)?;
                let path = format!("{}/issues/{number}/comments", Self::repo_path(repo));
                let existing = self
                    .get_json(Provider::GitHub, &format!("{path}?per_page=100"))?
                    .ok_or_else(|| ForgeError::NotFound(format!("issue #{number}")))?;
                let last = existing.as_array().and_then(|cs| cs.last());
                if last.is_some_and(|c| {
                    c.pointer("/user/login").and_then(Value::as_str) == Some(&self.settings.bot_login)
                        && c.get("body").and_then(Value::as_str) == Some(body)
                }) {
                    return Ok(ActionResult::noop("identical comment already posted"));
                }
                let resp = Self::expect_ok(self.gh("POST", &path, Some(json!({ "body": body })))?)?;
                let id = resp.json()?.get("id").and_then(Value::as_u64).unwrap_or_default();
                Ok(ActionResult { status: super::ActionStatus::Applied, detail: format!("comment {id}") })
            }
            Action::UpdateComment { repo, comment_id, body } => {
                Self::github_only(repo)?;
                let path = format!("{}/issues/comments/{comment_id}", Self::repo_path(repo));
                let current = self
                    .get_json(Provider::GitHub, &path)?
                    .ok_or_else(|| ForgeError::NotFound(format!("comment {comment_id}")))?;
                if current.get("body").and_then(Value::as_str) == Some(body) {
                    return Ok(ActionResult::noop("comment unchanged"));
                }
                Self::expect_ok(self.gh("PATCH", &path, Some(json!({ "body": body })))?)?;
                Ok(ActionResult::applied())
            }
            Action::ClosePr { repo, number } => {
                Self::github_only(repo)?;
                let path = format!("{}/pulls/{number}", Self::repo_path(repo));
                let pr = self.get_json(Provider::GitHub, &path)?.ok_or_else(|| ForgeError::NotFound(format!("pull request #{number}")))?;
                if pr.get("merged").and_then(Value::as_bool) == Some(true) {
                    return Ok(ActionResult::failed("pull request is merged"));
                }
                if pr.get("state").and_then(Value::as_str) == Some("closed") {
                    return Ok(ActionResult::noop("already closed"));
                }
                Self::expect_ok(self.gh("PATCH", &path, Some(json!({ "state": "closed" })))?)?;
                Ok(ActionResult::applied())
            }
            Action::SetMilestone { repo, number, milestone } => {
                Self::github_only(repo)?;
                let path = format!("{}/issues/{number}", Self::repo_path(repo));
                let issue = self.get_json(Provider::GitHub, &path)?.ok_or_else(|| ForgeError::NotFound(format!("issue #{number}")))?;
                if issue.pointer("/milestone/number").and_then(Value::as_u64) == Some(*milestone) {
                    return Ok(ActionResult::noop("milestone already set"));
                }
                Self::expect_ok(self.gh("PATCH", &path, Some(json!({ "milestone": milestone })))?)?;
                Ok(ActionResult::applied())
            }
            Action::MergePr { repo, number, message, signed } => {
                Self::github_only(repo)?;
                let path = format!("{}/pulls/{number}", Self::repo_path(repo));
                let pr = self.get_json(Provider::GitHub, &path)?.ok_or_else(|| ForgeError::NotFound(format!("pull request #{number}")))?;
                if pr.get("merged").and_then(Value::as_bool) == Some(true) {
                    return Ok(ActionResult::noop("already merged"));
                }
                if pr.get("mergeable").and_then(Value::as_bool) == Some(false) {
                    return Ok(ActionResult::failed("not mergeable: the forge reports conflicts"));
                }
                let (title, body) = message.split_once('\n').unwrap_or((message, ""));
                let resp = self.gh(
                    "PUT",
                    &format!("{path}/merge"),
                    Some(json!({
                        "commit_title": title,
                        "commit_message": body.trim_start_matches('\n'),
                        "merge_method": "merge",
                    })),
                )?;
                match resp.status {
                    200 => {
                        let sha = resp.json()?.get("sha").and_then(Value::as_str).unwrap_or_default().to_owned();
                        // Web merges are signed by the forge; the flag cannot be enforced here.
                        let _ = signed;
                        Ok(ActionResult { status: super::ActionStatus::Applied, detail: format!("merged as {sha}") })
                    }
                    405 | 409 => Ok(ActionResult::failed(format!("not mergeable: {}", rejected(&resp)))),
                    _ => Err(rejected(&resp)),
                }
            }
            Action::PushBranch { repo, branch, source, force, objects } => {
                if let Some(head) = self.branch_head(repo, branch)? {
                    if head == *source {
                        return Ok(ActionResult::noop("branch already at source"));
                    }
                }
                let known = match repo.provider() {
                    Provider::GitHub => self.get_json(Provider::GitHub, &format!("{}/commits/{source}", Self::repo_path(repo)))?,
                    Provider::GitLab => self.get_json(Provider::GitLab, &format!("{}/repository/commits/{source}", Self::repo_path(repo)))?,
                };
                if known.is_none() {
                    return Ok(ActionResult::failed(format!(
                        "{} is not on the forge; pushing {} synthesized object(s) needs git transport, not the REST API",
                        source.short(),
                        objects.len()
                    )));
                }
                match repo.provider() {
                    Provider::GitHub => {
                        let path = format!("{}/git/refs/heads/{branch}", Self::repo_path(repo));
                        let resp = self.gh("PATCH", &path, Some(json!({ "sha": source.as_str(), "force": force })))?;
                        if resp.status == 422 || resp.status == 404 {
                            Self::expect_ok(self.gh(
                                "POST",
                                &format!("{}/git/refs", Self::repo_path(repo)),
                                Some(json!({ "ref": format!("refs/heads/{branch}"), "sha": source.as_str() })),
                            )?)?;
                        } else {
                            Self::expect_ok(resp)?;
                        }
                    }
                    Provider::GitLab => {
                        let base = format!("{}/repository/branches", Self::repo_path(repo));
                        let _ = self.gl("DELETE", &format!("{base}/{}", enc(branch)), None)?;
                        Self::expect_ok(self.gl(
                            "POST",
                            &format!("{base}?branch={}&ref={source}", enc(branch)),
                            None,
                        )?)?;
                    }
                }
                Ok(ActionResult::applied())
            }
            Action::DeleteBranch { repo, branch } => {
                let resp = match repo.provider() {
                    Provider::GitHub => self.gh("DELETE", &format!("{}/git/refs/heads/{branch}", Self::repo_path(repo)), None)?,
                    Provider::GitLab => self.gl(
                        "DELETE",
                        &format!("{}/repository/branches/{}", Self::repo_path(repo), enc(branch)),
                        None,
                    )?,
                };
                match resp.status {
                    404 | 422 => Ok(ActionResult::noop("branch absent")),
                    _ => Self::expect_ok(resp).map(|_| ActionResult::applied()),
                }
            }
            Action::CreateCheckRun { repo, head_sha, name, conclusion, summary, details_url, .. } => {
                Self::github_only(repo)?;
                let conclusion_text = match conclusion {
                    CheckConclusion::Success => "success",
                    CheckConclusion::Failure => "failure",
                    CheckConclusion::Cancelled => "cancelled",
                };
                let existing = self
                    .get_json(
                        Provider::GitHub,
                        &format!("{}/commits/{head_sha}/check-runs?check_name={}", Self::repo_path(repo), enc(name)),
                    )?
                    .unwrap_or(Value::Null);
                let same = existing.get("check_runs").and_then(Value::as_array).is_some_and(|runs| {
                    runs.first().is_some_and(|r| {
                        r.get("conclusion").and_then(Value::as_str) == Some(conclusion_text)
                            && r.pointer("/output/summary").and_then(Value::as_str) == Some(summary)
                    })
                });
                if same {
                    return Ok(ActionResult::noop("identical check run exists"));
                }
                Self::expect_ok(self.gh(
                    "POST",
                    &format!("{}/check-runs", Self::repo_path(repo)),
                    Some(json!({
                        "name": name,
                        "head_sha": head_sha.as_str(),
                        "status": "completed",
                        "conclusion": conclusion_text,
                        "details_url": details_url,
                        "output": { "title": name, "summary": summary },
                    })),
                )?)?;
                Ok(ActionResult::applied())
            }
            Action::SetCommitStatus { repo, sha, context, state, description, target_url } => {
                Self::github_only(repo)?;
                let state_text = match state {
                    StatusState::Pending => "pending",
                    StatusState::Success => "success",
                    StatusState::Failure => "failure",
                    StatusState::Error => "error",
                };
                let existing = self
                    .get_json(Provider::GitHub, &format!("{}/commits/{sha}/statuses", Self::repo_path(repo)))?
                    .unwrap_or(Value::Null);
                let latest = existing
                    .as_array()
                    .and_then(|ss| ss.iter().find(|s| s.get("context").and_then(Value::as_str) == Some(context)));
                if latest.is_some_and(|s| {
                    s.get("state").and_then(Value::as_str) == Some(state_text)
                        && s.get("description").and_then(Value::as_str) == Some(description)
                }) {
                    return Ok(ActionResult::noop("identical status exists"));
                }
                Self::expect_ok(self.gh(
                    "POST",
                    &format!("{}/statuses/{sha}", Self::repo_path(repo)),
                    Some(json!({
                        "state": state_text,
                        "context": context,
                        "description": description,
                        "target_url": target_url,
                    })),
                )?)?;
                Ok(ActionResult::applied())
            }
            Action::AddCardToColumn { repo, board, column, pr_number } => {
                Self::github_only(repo)?;
                let columns = self.board(repo, board)?;
                let Some((target, _, _)) = columns.iter().find(|(_, name, _)| name == column) else {
                    return Ok(ActionResult::failed(format!("no column {column:?} on board {board}")));
                };
                if let Some((id, name, _)) = columns.iter().find(|(_, _, cards)| cards.iter().any(|(_, n)| n == pr_number)) {
                    return Ok(if id == target {
                        ActionResult::noop("card already in column")
                    } else {
                        ActionResult::failed(format!("card already in column {name:?}"))
                    });
                }
                let pr = self
                    .get_json(Provider::GitHub, &format!("{}/pulls/{pr_number}", Self::repo_path(repo)))?
                    .ok_or_else(|| ForgeError::NotFound(format!("pull request #{pr_number}")))?;
                let content_id = u64_at(&pr, "/id")?;
                Self::expect_ok(self.gh(
                    "POST",
                    &format!("/projects/columns/{target}/cards"),
                    Some(json!({ "content_id": content_id, "content_type": "PullRequest" })),
                )?)?;
                Ok(ActionResult::applied())
            }
            Action::MoveCard { repo, board, pr_number, column } => {
                Self::github_only(repo)?;
                let columns = self.board(repo, board)?;
                let Some((target, _, _)) = columns.iter().find(|(_, name, _)| name == column) else {
                    return Ok(ActionResult::failed(format!("no column {column:?} on board {board}")));
                };
                let found = columns.iter().find_map(|(id, _, cards)| {
                    cards.iter().find(|(_, n)| n == pr_number).map(|(card, _)| (*id, *card))
                });
                match found {
                    None => Ok(ActionResult::failed(format!("no card for #{pr_number}"))),
                    Some((col, _)) if col == *target => Ok(ActionResult::noop("card already in column")),
                    Some((_, card)) => {
                        Self::expect_ok(self.gh(
                            "POST",
                            &format!("/projects/columns/cards/{card}/moves"),
                            Some(json!({ "position": "bottom", "column_id": target })),
                        )?)?;
                        Ok(ActionResult::applied())
                    }
                }
            }
            Action::DispatchJob { repo, token, script } => {
                let Some(url) = &self.settings.runner_url else {
                    return Ok(ActionResult::failed("no job runner configured"));
                };
                if self.dispatched.lock().expect("dispatch lock").contains(token) {
                    return Ok(ActionResult::noop("job already dispatched"));
                }
                let request = HttpRequest {
                    method: "POST".into(),
                    url: url.clone(),
                    body: Some(json!({ "token": token, "repo": repo.to_string(), "script": script })),
                };
                let sleep = Arc::clone(&self.sleep);
                let resp = self.retry.run(&|d| sleep(d), || self.transport.send(Provider::GitHub, &request))?;
                Self::expect_ok(resp)?;
                self.dispatched.lock().expect("dispatch lock").insert(token.clone());
                Ok(ActionResult::applied())
            }
        }
    }
}

impl ForgeReads for LiveForge {
    fn get_pr_snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError> {
        Self::github_only(repo)?;
        let resp = Self::expect_ok(self.gh(
            "POST",
            "/graphql",
            Some(json!({
                "query": SNAPSHOT_QUERY,
                "variables": { "owner": repo.owner(), "name": repo.name(), "number": number },
            })),
        )?)?;
        let v = resp.json()?;
        let pr = v.pointer("/data/repository/pullRequest").filter(|p| !p.is_null()).ok_or_else(|| {
            ForgeError::NotFound(format!("pull request #{number} in {repo}"))
        })?;
        let names = |pointer: &str, field: &str| -> Vec<String> {
            pr.pointer(pointer)
                .and_then(Value::as_array)
                .map(|ns| ns.iter().filter_map(|n| n.get(field)?.as_str().map(str::to_owned)).collect())
                .unwrap_or_default()
        };
        let labels = names("/labels/nodes", "name")
            .iter()
            .map(|l| self.settings.label_prefixes.classify(l))
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|e| ForgeError::Transport { message: e.to_string(), retryable: false })?;
        let state = match (str_at(pr, "/state")?, pr.get("merged").and_then(Value::as_bool)) {
            (_, Some(true)) | ("MERGED", _) => PrState::Merged,
            ("CLOSED", _) => PrState::Closed,
            _ => PrState::Open,
        };
        let ci_verdict = match pr.pointer("/commits/nodes/0/commit/statusCheckRollup/state").and_then(Value::as_str) {
            Some("SUCCESS") => CiVerdict::Success,
            Some("FAILURE") | Some("ERROR") => CiVerdict::Failure,
            Some("PENDING") | Some("EXPECTED") => CiVerdict::Pending,
            _ => CiVerdict::None,
        };
        let mergeable = match pr.get("mergeable").and_then(Value::as_str) {
            Some("MERGEABLE") => Mergeability::Clean,
            Some("CONFLICTING") => Mergeability::Conflicting,
            _ => Mergeability::Unknown,
        };
        let milestone = match pr.get("milestone").filter(|m| !m.is_null()) {
            Some(m) => Some(Milestone {
                number: u64_at(m, "/number")?,
                title: str_at(m, "/title")?.to_owned(),
                description: m.get("description").and_then(Value::as_str).unwrap_or_default().to_owned(),
            }),
            None => None,
        };
        let count = |p: &str| pr.pointer(p).and_then(Value::as_u64).unwrap_or(0) as u32;
        Ok(PrSnapshot {
            number,
            title: str_at(pr, "/title")?.to_owned(),
            author: pr.pointer("/author/login").and_then(Value::as_str).unwrap_or("ghost").to_owned(),
            head: GitRef { repo: repo.clone(), branch: str_at(pr, "/headRefName")?.to_owned(), sha: sha_at(pr, "/headRefOid")? },
            base: GitRef { repo: repo.clone(), branch: str_at(pr, "/baseRefName")?.to_owned(), sha: sha_at(pr, "/baseRefOid")? },
            labels,
            milestone,
            assignees: names("/assignees/nodes", "login").into_iter().collect(),
            approved_reviews: count("/approved/totalCount"),
            changes_requested_reviews: count("/changesRequested/totalCount"),
            ci_verdict,
            state,
            mergeable,
            merge_commit: pr.pointer("/mergeCommit/oid").and_then(Value::as_str).and_then(|s| Sha::parse(s).ok()),
        })
    }

    fn is_team_member(&self, org: &str, team: &str, user: &str) -> Result<bool, ForgeError> {
        self.membership.get_or_fetch(self.clock.as_ref(), org, team, user, || {
            let membership = self.get_json(Provider::GitHub, &format!("/orgs/{org}/teams/{team}/memberships/{user}"))?;
            if let Some(m) = membership {
                return Ok(m.get("state").and_then(Value::as_str) == Some("active"));
            }
            match self.get_json(Provider::GitHub, &format!("/orgs/{org}/teams/{team}"))? {
                Some(_) => Ok(false),
                None => Err(ForgeError::Config(format!("unknown team {org}/{team}"))),
            }
        })
    }

    fn list_open_prs(&self, repo: &RepoId) -> Result<Vec<u64>, ForgeError> {
        Self::github_only(repo)?;
        let v = self
            .get_json(Provider::GitHub, &format!("{}/pulls?state=open&per_page=100", Self::repo_path(repo)))?
            .ok_or_else(|| ForgeError::NotFound(format!("repository {repo}")))?;
        let mut numbers: Vec<u64> =
            v.as_array().into_iter().flatten().filter_map(|p| p.get("number").and_then(Value::as_u64)).collect();
        numbers.sort_unstable();
        Ok(numbers)
    }

    /// A condensed graph: the merge base plus one aggregate commit per head
    /// carrying every file that side changed.
    fn commit_graph(&self, repo: &RepoId, heads: &[Sha]) -> Result<CommitGraph, ForgeError> {
        Self::github_only(repo)?;
        let mut graph = CommitGraph::new();
        let insert = |graph: &mut CommitGraph, c: Commit| {
            graph.insert_trusted(c).map_err(|e| ForgeError::Transport { message: e.to_string(), retryable: false })
        };
        let empty = |sha: &Sha, parents: Vec<Sha>, files: BTreeSet<String>| Commit {
            sha: sha.clone(),
            parents,
            files,
            message: String::new(),
        };
        match heads {
            [a, b] if a != b => {
                let (base, theirs) = self.compare(repo, a, b)?;
                let (_, ours) = self.compare(repo, b, a)?;
                insert(&mut graph, empty(&base, vec![], BTreeSet::new()))?;
                for (head, files) in [(a, ours), (b, theirs)] {
                    if *head != base {
                        insert(&mut graph, empty(head, vec![base.clone()], files))?;
                    }
                }
            }
            _ => {
                for head in heads {
                    insert(&mut graph, empty(head, vec![], BTreeSet::new()))?;
                }
            }
        }
        Ok(graph)
    }

    fn branch_head(&self, repo: &RepoId, branch: &str) -> Result<Option<Sha>, ForgeError> {
        match repo.provider() {
            Provider::GitHub => self
                .get_json(Provider::GitHub, &format!("{}/branches/{}", Self::repo_path(repo), enc(branch)))?
                .map(|v| sha_at(&v, "/commit/sha"))
                .transpose(),
            Provider::GitLab => self
                .get_json(Provider::GitLab, &format!("{}/repository/branches/{}", Self::repo_path(repo), enc(branch)))?
                .map(|v| sha_at(&v, "/commit/id"))
                .transpose(),
        }
    }

    fn label_added_at(&self, repo: &RepoId, number: u64, label: &str) -> Result<Option<Timestamp>, ForgeError> {
        Self::github_only(repo)?;
        let v = self
            .get_json(Provider::GitHub, &format!("{}/issues/{number}/events?per_page=100", Self::repo_path(repo)))?
            .ok_or_else(|| ForgeError::NotFound(format!("issue #{number}")))?;
        let mut added = None;
        for event in v.as_array().into_iter().flatten() {
            if event.pointer("/label/name").and_then(Value::as_str) != Some(label) {
                continue;
            }
            match event.get("event").and_then(Value::as_str) {
                Some("labeled") => {
                    added = event
                        .get("created_at")
                        .and_then(Value::as_str)
                        .and_then(|t| chrono::DateTime::parse_from_rfc3339(t).ok())
                        .map(|t| t.with_timezone(&chrono::Utc));
                }
                Some("unlabeled") => added = None,
                _ => {}
            }
        }
        Ok(added)
    }

    fn list_milestones(&self, repo: &RepoId) -> Result<Vec<Milestone>, ForgeError> {
        Self::github_only(repo)?;
        let v = self
            .get_json(Provider::GitHub, &format!("{}/milestones?state=all&per_page=100", Self::repo_path(repo)))?
            .unwrap_or(Value::Null);
        v.as_array()
            .into_iter()
            .flatten()
            .map(|m| {
                Ok(Milestone {
                    number: u64_at(m, "/number")?,
                    title: str_at(m, "/title")?.to_owned(),
                    description: m.get("description").and_then(Value::as_str).unwrap_or_default().to_owned(),
                })
            })
            .collect()
    }

    fn board_cards(&self, repo: &RepoId, board: &str) -> Result<Vec<BoardCard>, ForgeError> {
        Self::github_only(repo)?;
        Ok(self
            .board(repo, board)?
            .into_iter()
            .flat_map(|(_, column, cards)| {
                cards.into_iter().map(move |(_, n)| BoardCard { board: board.to_owned(), column: column.clone(), pr_number: n })
            })
            .collect())
    }

    fn board_column_name(&self, _repo: &RepoId, _board: &str, column_id: u64) -> Result<Option<String>, ForgeError> {
        Ok(self
            .get_json(Provider::GitHub, &format!("/projects/columns/{column_id}"))?
            .and_then(|c| c.get("name").and_then(Value::as_str).map(str::to_owned)))
    }

    fn job_details(&self, repo: &RepoId, job_id: u64) -> Result<JobOutcome, ForgeError> {
        if repo.provider() != Provider::GitLab {
            return Err(ForgeError::Config(format!("{repo}: jobs live on the GitLab mirror")));
        }
        let path = format!("{}/jobs/{job_id}", Self::repo_path(repo));
        let job = self.get_json(Provider::GitLab, &path)?.ok_or_else(|| ForgeError::NotFound(format!("job {job_id}")))?;
        let status = match str_at(&job, "/status")? {
            "success" => JobStatus::Success,
            "failed" => JobStatus::Failure,
            _ => JobStatus::Canceled,
        };
        let log = Self::expect_ok(self.gl("GET", &format!("{path}/trace"), None)?)?.body;
        let web_url = str_at(&job, "/web_url")?.to_owned();
        let artifact_links = job
            .get("artifacts")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter_map(|a| a.get("filename").and_then(Value::as_str))
            .map(|f| Link { name: f.to_owned(), url: format!("{web_url}/artifacts/file/{f}") })
            .collect();
        Ok(JobOutcome {
            job_id,
            job_name: str_at(&job, "/name")?.to_owned(),
            status,
            log,
            web_url,
            artifact_links,
            script: None,
        })
    }
}

impl ForgePort for LiveForge {
    fn apply(&self, action: &Action) -> ActionResult {
        match self.apply_inner(action) {
            Ok(result) => result,
            Err(e) => {
                tracing::warn!(action = action.kind(), error = %e, "forge action failed");
                ActionResult::failed(e.to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(method: &str, url: &str, status: u16, body: Value) -> Exchange {
        Exchange {
            provider: Provider::GitHub,
            request: HttpRequest { method: method.into(), url: url.into(), body: None },
            response: HttpResponse { status, body: body.to_string() },
        }
    }

    #[test]
    fn transient_failures_are_retried_then_succeed() {
        struct Flaky(Mutex<u32>);
        impl Transport for Flaky {
            fn send(&self, _: Provider, _: &HttpRequest) -> Result<HttpResponse, ForgeError> {
                let mut n = self.0.lock().unwrap();
                *n += 1;
                if *n < 3 {
                    Err(ForgeError::Transport { message: "reset".into(), retryable: true })
                } else {
                    Ok(HttpResponse { status: 200, body: "[{\"number\": 3}, {\"number\": 1}]".into() })
                }
            }
        }
        let transport = Arc::new(Flaky(Mutex::new(0)));
        let forge = LiveForge::new(LiveSettings::default(), transport.clone()).with_retry(RetryPolicy::default(), Arc::new(|_| {}));
        assert_eq!(forge.list_open_prs(&RepoId::github("coq", "coq")).unwrap(), vec![1, 3]);
        assert_eq!(*transport.0.lock().unwrap(), 3);
    }

    #[test]
    fn unknown_team_is_a_configuration_error() {
        let transport = Arc::new(ReplayTransport::new(vec![
            exchange("GET", "https://api.github.com/orgs/coq/teams/nope/memberships/alice", 404, json!({})),
            exchange("GET", "https://api.github.com/orgs/coq/teams/nope", 404, json!({})),
        ]));
        let forge = LiveForge::new(LiveSettings::default(), transport);
        assert!(matches!(forge.is_team_member("coq", "nope", "alice"), Err(ForgeError::Config(_))));
    }

    #[test]
    fn label_timeline_tracks_latest_episode() {
        let transport = Arc::new(ReplayTransport::new(vec![exchange(
            "GET",
            "https://api.github.com/repos/coq/coq/issues/7/events?per_page=100",
            200,
            json!([
                {"event": "labeled", "label": {"name": "needs: rebase"}, "created_at": "2021-01-01T00:00:00Z"},
                {"event": "unlabeled", "label": {"name": "needs: rebase"}, "created_at": "2021-01-02T00:00:00Z"},
                {"event": "labeled", "label": {"name": "needs: rebase"}, "created_at": "2021-01-05T00:00:00Z"},
            ]),
        )]));
        let forge = LiveForge::new(LiveSettings::default(), transport);
        let at = forge.label_added_at(&RepoId::github("coq", "coq"), 7, "needs: rebase").unwrap().unwrap();
        assert_eq!(at.to_rfc3339(), "2021-01-05T00:00:00+00:00");
    }
}
