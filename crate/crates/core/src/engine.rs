//! Trigger-action core: routes events to workflows, records what they query and
//! decide, applies the returned actions and keeps the transcript.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::client::{ActionResult, ActionStatus, ForgeError, ForgePort, ForgeReads};
use crate::config::{Config, RepoConfig};
use crate::graph::CommitGraph;
use crate::model::{
    Action, BoardCard, Event, EventKind, EventPayload, JobOutcome, Milestone, PrSnapshot, RepoId, Sha, Timestamp,
};

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error("{0}")]
    Invalid(String),
}

/// What a workflow handler sees: its repository's configuration, read-only
/// forge queries and the current time.
pub struct Context<'a> {
    pub config: &'a Config,
    pub repo: &'a RepoConfig,
    pub forge: &'a dyn ForgeReads,
    pub now: Timestamp,
    notes: RefCell<Vec<String>>,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a Config, repo: &'a RepoConfig, forge: &'a dyn ForgeReads, now: Timestamp) -> Self {
        Context { config, repo, forge, now, notes: RefCell::new(Vec::new()) }
    }

    /// Attaches a decision note to the transcript entry.
    pub fn note(&self, text: impl Into<String>) {
        let text = text.into();
        tracing::debug!(note = %text);
        self.notes.borrow_mut().push(text);
    }

    pub fn take_notes(&self) -> Vec<String> {
        std::mem::take(&mut self.notes.borrow_mut())
    }

    pub fn source(&self) -> RepoId {
        self.repo.repo_id()
    }

    pub fn bot(&self) -> &str {
        &self.config.bot_handle
    }
}

pub trait Workflow: Send {
    fn name(&self) -> &'static str;

    fn subscribes(&self, kind: EventKind) -> bool;

    /// Decides which actions to take. Must not mutate the forge.
    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError>;

    /// Called after each of this workflow's actions has been applied. Returned
    /// actions are applied next, in order.
    fn after_apply(&mut self, _ctx: &Context<'_>, _action: &Action, _result: &ActionResult) -> Vec<Action> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub action: Action,
    pub result: ActionResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowRun {
    pub workflow: String,
    pub status: RunStatus,
    pub queries: Vec<String>,
    pub notes: Vec<String>,
    pub actions: Vec<AppliedAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub delivery_id: String,
    pub repo: RepoId,
    pub event: EventPayload,
    pub runs: Vec<WorkflowRun>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state_digest: Option<String>,
}

impl Transcript {
    pub fn actions(&self) -> impl Iterator<Item = (&TranscriptEntry, &WorkflowRun, &AppliedAction)> {
        self.entries
            .iter()
            .flat_map(|e| e.runs.iter().flat_map(move |r| r.actions.iter().map(move |a| (e, r, a))))
    }

    /// One line per applied action: `<workflow> <summary> -> <STATUS>`.
    pub fn action_lines(&self) -> Vec<String> {
        self.actions().map(|(_, run, a)| format!("{} {} -> {}", run.workflow, a.action.summary(), a.result.status)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

/// The cross-repository transcript sink.
pub type TranscriptSink = Arc<Mutex<Transcript>>;

/// `ts=<iso8601> repo=<owner/name> wf=<name> action=<kind> result=<status>`
pub fn action_log_line(ts: Timestamp, repo: &RepoId, workflow: &str, action: &Action, result: &ActionResult) -> String {
    format!(
        "ts={} repo={} wf={} action={} result={}",
        ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        repo.full_name(),
        workflow,
        action.kind(),
        result.status
    )
}

/// Forwards queries and logs each one.
struct RecordingReads<'a> {
    inner: &'a dyn ForgeReads,
    log: RefCell<Vec<String>>,
}

impl<'a> RecordingReads<'a> {
    fn record(&self, query: String) {
        self.log.borrow_mut().push(query);
    }
}

impl ForgeReads for RecordingReads<'_> {
    fn get_pr_snapshot(&self, repo: &RepoId, number: u64) -> Result<PrSnapshot, ForgeError> {
        self.record(format!("get_pr_snapshot {repo}#{number}"));
        self.inner.get_pr_snapshot(repo, number)
    }

    fn is_team_member(&self, org: &str, team: &str, user: &str) -> Result<bool, ForgeError> {
        self.record(format!("is_team_member {org}/{team} {user}"));
        self.inner.is_team_member(org, team, user)
    }

    fn list_open_prs(&self, repo: &RepoId) -> Result<Vec<u64>, ForgeError> {
        self.record(format!("list_open_prs {repo}"));
        self.inner.list_open_prs(repo)
    }

    fn commit_graph(&self, repo: &RepoId, heads: &[Sha]) -> Result<CommitGraph, ForgeError> {
        let heads_text: Vec<&str> = heads.iter().map(Sha::short).collect();
        self.record(format!("commit_graph {repo} {}", heads_text.join(",")));
        self.inner.commit_graph(repo, heads)
    }

    fn branch_head(&self, repo: &RepoId, branch: &str) -> Result<Option<Sha>, ForgeError> {
        self.record(format!("branch_head {repo} {branch}"));
        self.inner.branch_head(repo, branch)
    }

    fn label_added_at(&self, repo: &RepoId, number: u64, label: &str) -> Result<Option<Timestamp>, ForgeError> {
        self.record(format!("label_added_at {repo}#{number} {label:?}"));
        self.inner.label_added_at(repo, number, label)
    }

    fn list_milestones(&self, repo: &RepoId) -> Result<Vec<Milestone>, ForgeError> {
        self.record(format!("list_milestones {repo}"));
        self.inner.list_milestones(repo)
    }

    fn board_cards(&self, repo: &RepoId, board: &str) -> Result<Vec<BoardCard>, ForgeError> {
        self.record(format!("board_cards {repo} {board:?}"));
        self.inner.board_cards(repo, board)
    }

    fn board_column_name(&self, repo: &RepoId, board: &str, column_id: u64) -> Result<Option<String>, ForgeError> {
        self.record(format!("board_column_name {repo} {board:?} {column_id}"));
        self.inner.board_column_name(repo, board, column_id)
    }

    fn job_details(&self, repo: &RepoId, job_id: u64) -> Result<JobOutcome, ForgeError> {
        self.record(format!("job_details {repo} {job_id}"));
        self.inner.job_details(repo, job_id)
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "handler panicked".to_owned()
    }
}

/// Upper bound on follow-up actions produced through `after_apply` for one event.
const MAX_FOLLOW_UPS: usize = 64;

/// The workflows of one configured repository, with their module-owned state.
pub struct RepoRuntime {
    config: Arc<Config>,
    index: usize,
    workflows: Vec<Box<dyn Workflow>>,
}

impl RepoRuntime {
    pub fn new(config: Arc<Config>, index: usize, workflows: Vec<Box<dyn Workflow>>) -> Self {
        RepoRuntime { config, index, workflows }
    }

    pub fn repo_config(&self) -> &RepoConfig {
        &self.config.repositories[self.index]
    }

    /// Runs every subscribed workflow once, in registration order, applying
    /// each workflow's actions before the next one starts.
    pub fn dispatch(&mut self, forge: &dyn ForgePort, now: Timestamp, event: &Event) -> Vec<WorkflowRun> {
        let config = Arc::clone(&self.config);
        let repo_config = &config.repositories[self.index];
        let source = repo_config.repo_id();
        let mut runs = Vec::new();
        for workflow in &mut self.workflows {
            let kind = event.kind();
            if !workflow.subscribes(kind) {
                continue;
            }
            if let EventPayload::ClockTick { schedule, .. } = &event.payload {
                if schedule != workflow.name() {
                    continue;
                }
            }
            let name = workflow.name();
            let _span = tracing::info_span!("workflow", wf = name, delivery = %event.delivery_id).entered();
            let reads = RecordingReads { inner: forge, log: RefCell::new(Vec::new()) };
            let ctx = Context::new(&config, repo_config, &reads, now);

            forge.set_read_only(true);
            let outcome = catch_unwind(AssertUnwindSafe(|| workflow.handle(&ctx, event)));
            forge.set_read_only(false);

            let mut run = WorkflowRun {
                workflow: name.to_owned(),
                status: RunStatus::Ok,
                queries: Vec::new(),
                notes: Vec::new(),
                actions: Vec::new(),
            };
            let actions = match outcome {
                Ok(Ok(actions)) => actions,
                Ok(Err(e)) => {
                    tracing::error!(error = %e, "workflow failed");
                    run.status = RunStatus::Failed { error: e.to_string() };
                    Vec::new()
                }
                Err(panic) => {
                    let message = panic_message(panic.as_ref());
                    tracing::error!(error = %message, "workflow panicked");
                    run.status = RunStatus::Failed { error: format!("panic: {message}") };
                    Vec::new()
                }
            };

            let mut queue: std::collections::VecDeque<Action> = actions.into();
            let mut follow_ups = 0;
            while let Some(action) = queue.pop_front() {
                let result = if repo_config.repo_id() == *action.repo()
                    || repo_config.mirror_id().as_ref() == Some(action.repo())
                {
                    forge.apply(&action)
                } else {
                    ActionResult::failed(format!("action targets unconfigured repository {}", action.repo()))
                };
                tracing::info!(
                    target: "forgebot::actions",
                    "{}",
                    action_log_line(now, &source, name, &action, &result)
                );
                forge.set_read_only(true);
                let more = catch_unwind(AssertUnwindSafe(|| workflow.after_apply(&ctx, &action, &result)));
                forge.set_read_only(false);
                match more {
                    Ok(more) => {
                        follow_ups += more.len();
                        if follow_ups > MAX_FOLLOW_UPS {
                            run.status = RunStatus::Failed { error: "too many follow-up actions".into() };
                        } else {
                            queue.extend(more);
                        }
                    }
                    Err(panic) => {
                        run.status = RunStatus::Failed { error: format!("panic: {}", panic_message(panic.as_ref())) };
                    }
                }
                run.actions.push(AppliedAction { action, result });
            }
            run.queries = reads.log.take();
            run.notes = ctx.take_notes();
            runs.push(run);
        }
        runs
    }
}

/// Periodic ClockTick generation. Missed periods are not replayed: an entry
/// fires at most once per call.
#[derive(Debug, Clone)]
pub struct Schedule {
    entries: Vec<(String, Duration, Timestamp)>,
    last: Option<Timestamp>,
}

impl Schedule {
    pub fn new(start: Timestamp) -> Self {
        Schedule { entries: Vec::new(), last: Some(start) }
    }

    /// Adds an entry first due one `period` after `start`. Periods shorter
    /// than a minute are rejected.
    pub fn add(&mut self, workflow: &str, period: Duration, start: Timestamp) -> Result<(), String> {
        if period < Duration::minutes(1) {
            return Err(format!("schedule period for {workflow} must be at least one minute"));
        }
        self.entries.push((workflow.to_owned(), period, start + period));
        Ok(())
    }

    /// Names of the entries due at `now`, advancing their cursors.
    pub fn due(&mut self, now: Timestamp) -> Vec<String> {
        if self.last.is_some_and(|last| now < last) {
            return Vec::new();
        }
        self.last = Some(now);
        let mut due = Vec::new();
        for (name, period, next) in &mut self.entries {
            if now >= *next {
                due.push(name.clone());
                while *next <= now {
                    *next += *period;
                }
            }
        }
        due
    }
}

/// ClockTick event for `repo`.
pub fn tick_event(repo: &RepoId, schedule: &str, now: Timestamp) -> Event {
    Event {
        delivery_id: format!("tick:{schedule}:{}:{}", repo.full_name(), now.to_rfc3339()),
        repo: repo.clone(),
        payload: EventPayload::ClockTick { schedule: schedule.to_owned(), now },
    }
}

/// All repositories, serially. The server splits this into per-repo workers;
/// tests and replays drive it directly.
pub struct Engine {
    config: Arc<Config>,
    forge: Arc<dyn ForgePort>,
    runtimes: Vec<RepoRuntime>,
    schedule: Schedule,
    sink: TranscriptSink,
    seq: u64,
}

impl Engine {
    /// Builds the standard workflow set for every configured repository.
    pub fn new(config: Arc<Config>, forge: Arc<dyn ForgePort>, start: Timestamp) -> Self {
        let runtimes =
            (0..config.repositories.len()).map(|i| RepoRuntime::new(Arc::clone(&config), i, crate::workflows::standard())).collect();
        Self::with_runtimes(config, forge, start, runtimes)
    }

    pub fn with_runtimes(config: Arc<Config>, forge: Arc<dyn ForgePort>, start: Timestamp, runtimes: Vec<RepoRuntime>) -> Self {
        let mut schedule = Schedule::new(start);
        schedule
            .add(crate::workflows::pr_hygiene::NAME, config.stale_scan_period(), start)
            .expect("validated stale scan period");
        Engine { config, forge, runtimes, schedule, sink: TranscriptSink::default(), seq: 0 }
    }

    pub fn config(&self) -> &Arc<Config> {
        &self.config
    }

    pub fn sink(&self) -> TranscriptSink {
        Arc::clone(&self.sink)
    }

    pub fn transcript(&self) -> Transcript {
        self.sink.lock().expect("transcript lock poisoned").clone()
    }

    fn runtime_for(&mut self, repo: &RepoId) -> Option<&mut RepoRuntime> {
        self.runtimes
            .iter_mut()
            .find(|r| r.repo_config().repo_id() == *repo || r.repo_config().mirror_id().as_ref() == Some(repo))
    }

    /// Runs every subscribed workflow for `event`. Events for unconfigured
    /// repositories produce nothing.
    pub fn dispatch(&mut self, event: &Event, now: Timestamp) -> Vec<WorkflowRun> {
        let forge = Arc::clone(&self.forge);
        let Some(runtime) = self.runtime_for(&event.repo) else {
            tracing::info!(repo = %event.repo, "event for unconfigured repository");
            return Vec::new();
        };
        let runs = runtime.dispatch(forge.as_ref(), now, event);
        record(&self.sink, &mut self.seq, event, runs.clone());
        runs
    }

    /// ClockTicks for every due schedule entry and configured repository.
    pub fn tick_events(&mut self, now: Timestamp) -> Vec<Event> {
        let due = self.schedule.due(now);
        let mut events = Vec::new();
        for name in due {
            for runtime in &self.runtimes {
                events.push(tick_event(&runtime.repo_config().repo_id(), &name, now));
            }
        }
        events
    }

    pub fn tick(&mut self, now: Timestamp) -> Vec<WorkflowRun> {
        let mut runs = Vec::new();
        for event in self.tick_events(now) {
            runs.extend(self.dispatch(&event, now));
        }
        runs
    }

    /// Splits the engine for concurrent serving: one runtime per repository,
    /// plus the schedule.
    pub fn into_parts(self) -> (Arc<Config>, Arc<dyn ForgePort>, Vec<RepoRuntime>, Schedule, TranscriptSink) {
        (self.config, self.forge, self.runtimes, self.schedule, self.sink)
    }
}

/// Appends a transcript entry. Events that triggered nothing are still recorded.
pub fn record(sink: &TranscriptSink, seq: &mut u64, event: &Event, runs: Vec<WorkflowRun>) {
    *seq += 1;
    sink.lock().expect("transcript lock poisoned").entries.push(TranscriptEntry {
        seq: *seq,
        delivery_id: event.delivery_id.clone(),
        repo: event.repo.clone(),
        event: event.payload.clone(),
        runs,
    });
}

/// Counts of each status in a set of runs; used by the log summary.
pub fn status_counts(runs: &[WorkflowRun]) -> BTreeMap<ActionStatus, usize> {
    let mut counts = BTreeMap::new();
    for a in runs.iter().flat_map(|r| &r.actions) {
        *counts.entry(a.result.status).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> Timestamp {
        chrono::Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn schedule_fires_once_per_period_and_is_monotonic() {
        let mut s = Schedule::new(t0());
        s.add("pr_hygiene", Duration::days(1), t0()).unwrap();
        assert!(s.due(t0()).is_empty());
        assert_eq!(s.due(t0() + Duration::days(1)), vec!["pr_hygiene"]);
        assert!(s.due(t0() + Duration::days(1)).is_empty());
        assert!(s.due(t0() + Duration::hours(12)).is_empty());
        // missed periods collapse into one tick
        assert_eq!(s.due(t0() + Duration::days(5)).len(), 1);
        assert!(s.add("x", Duration::seconds(30), t0()).is_err());
    }

    #[test]
    fn action_log_line_format() {
        let repo = RepoId::github("coq", "coq");
        let action = Action::AddLabel { repo: repo.clone(), number: 7, label: "needs: rebase".into() };
        let line = action_log_line(t0(), &repo, "pr_hygiene", &action, &ActionResult::applied());
        assert_eq!(line, "ts=2021-01-01T00:00:00Z repo=coq/coq wf=pr_hygiene action=AddLabel result=APPLIED");
    }
}
