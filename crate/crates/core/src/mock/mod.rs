//! Deterministic in-memory forge used as the test bed for every workflow.

pub mod harness;
pub mod payloads;
pub mod scenario;
pub mod seed;
pub mod state;
pub mod user;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};

use crate::client::{ActionResult, ForgeError, ForgePort, ForgeReads};
use crate::graph::CommitGraph;
use crate::model::{Action, BoardCard, JobOutcome, Milestone, PrSnapshot, RepoId, Sha, Timestamp};

pub use state::{ForgeState, Notification};
pub use user::{FinishedJob, NewPr};

/// A [`ForgeState`] behind a lock, implementing [`ForgePort`].
///
/// While read-only mode is on, every action is rejected. The engine enables it
/// around handler evaluation so a handler that tries to mutate is caught.
#[derive(Debug)]
pub struct MockForge {
    state: Mutex<ForgeState>,
    read_only: AtomicBool,
}

impl MockForge {
    pub fn new(state: ForgeState) -> Self {
        MockForge { state: Mutex::new(state), read_only: AtomicBool::new(false) }
    }

    pub fn state(&self) -> MutexGuard<'_, ForgeState> {
        self.state.lock().expect("mock forge lock poisoned")
    }

    pub fn take_outbox(&self) -> Vec<Notification> {
        std::mem::take(&mut self.state().outbox)
    }

    pub fn digest(&self) -> String {
        self.state().digest()
    }

    pub fn set_now(&self, now: Timestamp) {
        self.state().now = now;
    }
}

impl ForgeReads for MockForge {
    fn get_pr_snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError> {
        self.state().get_pr_snapshot(repo, number)
    }

    fn is_team_member(&self, org: &str, team: &str, user: &str) -> Result<bool, ForgeError> {
        self.state().is_team_member(org, team, user)
    }

    fn list_open_prs(&self, repo: &RepoId) -> Result<Vec<u64>, ForgeError> {
        self.state().list_open_prs(repo)
    }

    fn commit_graph(&self, repo: &RepoId, heads: &[Sha]) -> Result<CommitGraph, ForgeError> {
        self.state().commit_graph(repo, heads)
    }

    fn branch_head(&self, repo: &RepoId, branch: &str) -> Result<Option<Sha>, ForgeError> {
        self.state().branch_head(repo, branch)
    }

    fn label_added_at(&self, repo: &RepoId, number: u64, label: &str) -> Result<Option<Timestamp>, ForgeError> {
        self.state().label_added_at(repo, number, label)
    }

    fn list_milestones(&self, repo: &RepoId) -> Result<Vec<Milestone>, ForgeError> {
        self.state().list_milestones(repo)
    }

    fn board_cards(&self, repo: &RepoId, board: &str) -> Result<Vec<BoardCard>, ForgeError> {
        self.state().board_cards(repo, board)
    }

    fn board_column_name(&self, repo: &RepoId, board: &str, column_id: u64) -> Result<Option<String>, ForgeError> {
        self.state().board_column_name(repo, board, column_id)
    }

    fn job_details(&self, repo: &RepoId, job_id: u64) -> Result<JobOutcome, ForgeError> {
        self.state().job_details(repo, job_id)
    }
}

impl ForgePort for MockForge {
    fn apply(&self, action: &Action) -> ActionResult {
        if self.read_only.load(Ordering::SeqCst) {
            return ActionResult::failed(ForgeError::ReadOnly.to_string());
        }
        let mut state = self.state();
        let (next, result) = state.step(action);
        *state = next;
        result
    }

    fn set_read_only(&self, read_only: bool) {
        self.read_only.store(read_only, Ordering::SeqCst);
    }
}
