//! The typed interface to a forge: read-only queries (state triggers) and a
//! single action executor. Two implementations exist, [`live::LiveForge`] and
//! [`crate::mock::MockForge`]; both are checked by [`contract`].

pub mod contract;
pub mod live;

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::graph::CommitGraph;
use crate::model::{Action, BoardCard, JobOutcome, Milestone, PrSnapshot, RepoId, Sha, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForgeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("forge rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("mutation attempted while evaluating a workflow handler")]
    ReadOnly,
}

impl ForgeError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ForgeError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionStatus {
    Applied,
    Noop,
    Failed,
}

impl fmt::Display for ActionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionStatus::Applied => "APPLIED",
            ActionStatus::Noop => "NOOP",
            ActionStatus::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    pub detail: String,
}

impl ActionResult {
    pub fn applied() -> Self {
        ActionResult { status: ActionStatus::Applied, detail: String::new() }
    }

    pub fn noop(detail: impl Into<String>) -> Self {
        ActionResult { status: ActionStatus::Noop, detail: detail.into() }
    }

    pub fn failed(detail: impl Into<String>) -> Self {
        ActionResult { status: ActionStatus::Failed, detail: detail.into() }
    }

    pub fn is_failed(&self) -> bool {
        self.status == ActionStatus::Failed
    }
}

/// Read-only queries against a forge. Workflow handlers only ever see this trait.
pub trait ForgeReads {
    fn get_pr_snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError>;

    /// `Err(Config)` when the team does not exist, which is distinct from `Ok(false)`.
    fn is_team_member(&self, org: &str, team: &str, user: &str) -> Result<bool, ForgeError>;

    fn list_open_prs(&self, repo: &RepoId) -> Result<Vec<u64>, ForgeError>;

    /// The part of the commit graph needed to merge the given heads.
    fn commit_graph(&self, repo: &RepoId, heads: &[Sha]) -> Result<CommitGraph, ForgeError>;

    fn branch_head(&self, repo: &RepoId, branch: &str) -> Result<Option<Sha>, ForgeError>;

    /// When `label` was most recently added to the issue or PR, if it is present.
    fn label_added_at(&self, repo: &RepoId, number: u64, label: &str) -> Result<Option<Timestamp>, ForgeError>;

    fn list_milestones(&self, repo: &RepoId) -> Result<Vec<Milestone>, ForgeError>;

    fn board_cards(&self, repo: &RepoId, board: &str) -> Result<Vec<BoardCard>, ForgeError>;

    fn board_column_name(&self, repo: &RepoId, board: &str, column_id: u64) -> Result<Option<String>, ForgeError>;

    fn job_details(&self, repo: &RepoId, job_id: u64) -> Result<JobOutcome, ForgeError>;
}

/// Queries plus the action executor.
pub trait ForgePort: ForgeReads + Send + Sync {
    /// Applies `action` idempotently: when its postcondition already holds the
    /// result is `NOOP` and the forge is untouched.
    fn apply(&self, action: &Action) -> ActionResult;

    /// Toggles rejection of mutations. The engine turns this on while a handler runs.
    fn set_read_only(&self, _read_only: bool) {}
}

/// Exponential backoff for retryable transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2, max_attempts: 5 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, given that attempt `n` (1-based) failed.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base * self.factor.pow(attempt.saturating_sub(1))
    }

    pub fn run<T>(
        &self,
        sleep: &dyn Fn(Duration),
        mut op: impl FnMut() -> Result<T, ForgeError>,
    ) -> Result<T, ForgeError> {
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts => {
                    let delay = self.delay_after(attempt);
                    tracing::debug!(attempt, ?delay, error = %e, "retrying forge request");
                    sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Team membership answers cached for at most `ttl`.
pub struct MembershipCache {
    ttl: chrono::Duration,
    entries: Mutex<HashMap<(String, String, String), (bool, Timestamp)>>,
}

impl MembershipCache {
    pub fn new(ttl: chrono::Duration) -> Self {
        MembershipCache { ttl, entries: Mutex::new(HashMap::new()) }
    }

    pub fn get_or_fetch(
        &self,
        clock: &dyn Clock,
        org: &str,
        team: &str,
        user: &str,
        fetch: impl FnOnce() -> Result<bool, ForgeError>,
    ) -> Result<bool, ForgeError> {
        let key = (org.to_owned(), team.to_owned(), user.to_owned());
        let now = clock.now();
        if let Some((member, at)) = self.entries.lock().expect("cache lock poisoned").get(&key) {
            if now - *at < self.ttl {
                return Ok(*member);
            }
        }
        let member = fetch()?;
        self.entries.lock().expect("cache lock poisoned").insert(key, (member, now));
        Ok(member)
    }
}

impl Default for MembershipCache {
    fn default() -> Self {
        Self::new(chrono::Duration::seconds(60))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use std::cell::{Cell, RefCell};

    #[test]
    fn retry_backoff_is_exponential_and_bounded() {
        let policy = RetryPolicy::default();
        let slept = RefCell::new(Vec::new());
        let calls = Cell::new(0);
        let result: Result<(), _> = policy.run(&|d| slept.borrow_mut().push(d), || {
            calls.set(calls.get() + 1);
            Err(ForgeError::Transport { message: "reset".into(), retryable: true })
        });
        assert!(result.is_err());
        assert_eq!(calls.get(), 5);
        let secs: Vec<u64> = slept.borrow().iter().map(|d| d.as_secs()).collect();
        assert_eq!(secs, vec![1, 2, 4, 8]);
    }

    #[test]
    fn non_retryable_errors_fail_fast() {
        let calls = Cell::new(0);
        let result: Result<(), _> = RetryPolicy::default().run(&|_| {}, || {
            calls.set(calls.get() + 1);
            Err(ForgeError::NotFound("pr".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn membership_cache_expires_after_ttl() {
        let clock = ManualClock::new(chrono::Utc::now());
        let cache = MembershipCache::default();
        let fetches = Cell::new(0);
        let fetch = || {
            fetches.set(fetches.get() + 1);
            Ok(true)
        };
        assert!(cache.get_or_fetch(&clock, "coq", "maintainers", "alice", fetch).unwrap());
        clock.advance(chrono::Duration::seconds(59));
        assert!(cache.get_or_fetch(&clock, "coq", "maintainers", "alice", fetch).unwrap());
        assert_eq!(fetches.get(), 1);
        clock.advance(chrono::Duration::seconds(1));
        assert!(cache.get_or_fetch(&clock, "coq", "maintainers", "alice", fetch).unwrap());
        assert_eq!(fetches.get(), 2);
    }
}
