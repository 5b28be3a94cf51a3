//! Keeps the `needs: rebase` label in sync with merge conflicts and closes PRs
//! whose conflicts stay unresolved after a warning.

use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::config::{render_template, StaleConfig, Templates};
use crate::engine::{Context, Workflow, WorkflowError};
use crate::model::{Action, Event, EventKind, EventPayload, PrSnapshot, PrState, RepoId, Timestamp};

use super::ci_bridge::synthesize_candidate;

pub const NAME: &str = "pr_hygiene";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncOutcome {
    Candidate,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleState {
    pub pr_number: u64,
    pub labeled_since: Timestamp,
    pub warned_at: Option<Timestamp>,
}

/// Label bookkeeping after a sync. Updates `states` and returns the actions.
pub fn on_sync_outcome(
    repo: &RepoId,
    pr: &PrSnapshot,
    outcome: SyncOutcome,
    label: &str,
    states: &mut BTreeMap<u64, StaleState>,
    now: Timestamp,
) -> Vec<Action> {
    match outcome {
        SyncOutcome::Conflict => {
            if pr.has_label(label) {
                states.entry(pr.number).or_insert(StaleState { pr_number: pr.number, labeled_since: now, warned_at: None });
                Vec::new()
            } else {
                states.insert(pr.number, StaleState { pr_number: pr.number, labeled_since: now, warned_at: None });
                vec![Action::AddLabel { repo: repo.clone(), number: pr.number, label: label.to_owned() }]
            }
        }
        SyncOutcome::Candidate => {
            states.remove(&pr.number);
            if pr.has_label(label) {
                vec![Action::RemoveLabel { repo: repo.clone(), number: pr.number, label: label.to_owned() }]
            } else {
                Vec::new()
            }
        }
    }
}

/// Warn-then-close pass over the tracked episodes. Thresholds are inclusive.
pub fn stale_scan(
    repo: &RepoId,
    states: &mut BTreeMap<u64, StaleState>,
    now: Timestamp,
    stale: &StaleConfig,
    templates: &Templates,
) -> Vec<Action> {
    let warn_after = Duration::days(stale.warn_after_days.into());
    let grace = Duration::days(stale.grace_days.into());
    let mut actions = Vec::new();
    let mut closed = Vec::new();
    for state in states.values_mut() {
        let vars = [
            ("pr_number", state.pr_number.to_string()),
            ("days", stale.warn_after_days.to_string()),
            ("grace_days", stale.grace_days.to_string()),
        ];
        match state.warned_at {
            None if now - state.labeled_since >= warn_after => {
                actions.push(Action::PostComment {
                    repo: repo.clone(),
                    number: state.pr_number,
                    body: render_template(&templates.stale_warning, &vars, &[]),
                });
                state.warned_at = Some(now);
            }
            Some(warned) if now - warned >= grace => {
                actions.push(Action::ClosePr { repo: repo.clone(), number: state.pr_number });
                actions.push(Action::PostComment {
                    repo: repo.clone(),
                    number: state.pr_number,
                    body: render_template(&templates.stale_closure, &vars, &[]),
                });
                closed.push(state.pr_number);
            }
            _ => {}
        }
    }
    for number in closed {
        states.remove(&number);
    }
    actions
}

#[derive(Default)]
pub struct PrHygiene {
    states: BTreeMap<u64, StaleState>,
}

impl PrHygiene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn states(&self) -> &BTreeMap<u64, StaleState> {
        &self.states
    }

    fn sync(&mut self, ctx: &Context<'_>, number: u64) -> Result<Vec<Action>, WorkflowError> {
        let repo = ctx.source();
        let pr = ctx.forge.get_pr_snapshot(&repo, number)?;
        if pr.state != PrState::Open {
            return Ok(Vec::new());
        }
        let graph = ctx.forge.commit_graph(&repo, &[pr.head.sha.clone(), pr.base.sha.clone()])?;
        let outcome = match synthesize_candidate(&graph, number, &pr.head.sha, &pr.base.sha)
            .map_err(|e| WorkflowError::Invalid(e.to_string()))?
        {
            Ok(_) => SyncOutcome::Candidate,
            Err(_) => SyncOutcome::Conflict,
        };
        let label = &ctx.repo.stale.label;
        if outcome == SyncOutcome::Conflict && pr.has_label(label) && !self.states.contains_key(&number) {
            // Labeled before we started tracking it (restart, or set by hand).
            let since = ctx.forge.label_added_at(&repo, number, label)?.unwrap_or(ctx.now);
            self.states.insert(number, StaleState { pr_number: number, labeled_since: since, warned_at: None });
        }
        ctx.note(format!("PR #{number}: {outcome:?}"));
        Ok(on_sync_outcome(&repo, &pr, outcome, label, &mut self.states, ctx.now))
    }

    /// Adopts labeled PRs we do not track and forgets episodes that ended
    /// outside our view (PR closed, label removed by hand).
    fn reconcile(&mut self, ctx: &Context<'_>) -> Result<(), WorkflowError> {
        let repo = ctx.source();
        let label = &ctx.repo.stale.label;
        let open = ctx.forge.list_open_prs(&repo)?;
        self.states.retain(|n, _| open.contains(n));
        for number in open {
            match ctx.forge.label_added_at(&repo, number, label)? {
                Some(since) => {
                    self.states.entry(number).or_insert_with(|| {
                        ctx.note(format!("tracking PR #{number}, labeled since {since}"));
                        StaleState { pr_number: number, labeled_since: since, warned_at: None }
                    });
                }
                None => {
                    self.states.remove(&number);
                }
            }
        }
        Ok(())
    }
}

impl Workflow for PrHygiene {
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
                | EventKind::ClockTick
        )
    }

    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError> {
        let repo = ctx.source();
        if event.repo != repo {
            return Ok(Vec::new());
        }
        match &event.payload {
            EventPayload::PrOpened { number } | EventPayload::PrSynchronized { number } => self.sync(ctx, *number),
            EventPayload::PrClosed { number, .. } => {
                self.states.remove(number);
                Ok(Vec::new())
            }
            EventPayload::BaseBranchPushed { branch, .. } | EventPayload::PushToBranch { branch, .. } => {
                let mut actions = Vec::new();
                for number in ctx.forge.list_open_prs(&repo)? {
                    if ctx.forge.get_pr_snapshot(&repo, number)?.base.branch == *branch {
                        actions.extend(self.sync(ctx, number)?);
                    }
                }
                Ok(actions)
            }
            EventPayload::ClockTick { now, .. } => {
                self.reconcile(ctx)?;
                Ok(stale_scan(&repo, &mut self.states, *now, &ctx.repo.stale, &ctx.repo.templates))
            }
            _ => Ok(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> Timestamp {
        chrono::Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
    }

    fn repo() -> RepoId {
        RepoId::github("coq", "coq")
    }

    fn scan_at(states: &mut BTreeMap<u64, StaleState>, days: i64) -> Vec<Action> {
        stale_scan(&repo(), states, t0() + Duration::days(days), &StaleConfig::default(), &Templates::default())
    }

    #[test]
    fn warn_then_close_with_inclusive_thresholds() {
        let mut states = BTreeMap::new();
        states.insert(7, StaleState { pr_number: 7, labeled_since: t0(), warned_at: None });
        assert!(scan_at(&mut states, 29).is_empty());
        let warn = scan_at(&mut states, 30);
        assert_eq!(warn.len(), 1);
        assert!(matches!(&warn[0], Action::PostComment { body, .. } if body.contains("30 days")));
        assert!(scan_at(&mut states, 30).is_empty(), "idempotent at the same instant");
        assert!(scan_at(&mut states, 59).is_empty());
        let close = scan_at(&mut states, 60);
        assert!(matches!(close[0], Action::ClosePr { number: 7, .. }));
        assert_eq!(close.len(), 2);
        assert!(scan_at(&mut states, 200).is_empty());
    }

    #[test]
    fn late_scan_warns_before_closing() {
        let mut states = BTreeMap::new();
        states.insert(7, StaleState { pr_number: 7, labeled_since: t0(), warned_at: None });
        let first = scan_at(&mut states, 90);
        assert_eq!(first.len(), 1, "only a warning, never a direct close");
    }
}
