//! Backport board automation driven by milestone descriptions.
//!
//! A milestone opts into backporting with a description line such as
//! `coqbot: backport to v8.13 (request inclusion column: Request 8.13.1; shipped column: Shipped in 8.13.1; rejection milestone: 12)`.
//! Merged PRs with such a milestone get a card in the request column; pushes of
//! the backport to the release branch move the card to the shipped column; a
//! release manager deleting the card rejects the backport.

use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::render_template;
use crate::engine::{Context, Workflow, WorkflowError};
use crate::model::{Action, BoardCard, Event, EventKind, EventPayload, PrSnapshot, PrState, PushedCommit, RepoId};

pub const NAME: &str = "backport_tracker";

pub const DEFAULT_REQUEST_COLUMN: &str = "Backport requested";
pub const DEFAULT_SHIPPED_COLUMN: &str = "Shipped";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackportSpec {
    pub release_branch: String,
    pub request_column: String,
    pub shipped_column: String,
    pub rejection_milestone: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed backport directive {line:?}: {reason}")]
pub struct DirectiveError {
    pub line: String,
    pub reason: String,
}

/// Finds the backport directive in a milestone description.
pub fn parse_milestone_metadata(description: &str, bot_handle: &str) -> Result<Option<BackportSpec>, DirectiveError> {
    let keyword = Regex::new(&format!(r"(?i)^\s*{}\s*:\s*backport\s+to\b(.*)$", regex::escape(bot_handle)))
        .expect("directive regex");
    for line in description.lines() {
        let Some(caps) = keyword.captures(line) else { continue };
        let err = |reason: &str| DirectiveError { line: line.trim().to_owned(), reason: reason.to_owned() };
        let rest = caps[1].trim();
        let (branch, options) = match rest.find('(') {
            Some(i) => (rest[..i].trim(), Some(rest[i..].trim())),
            None => (rest, None),
        };
        if branch.is_empty() {
            return Err(err("no release branch given"));
        }
        if branch.contains(char::is_whitespace) {
            return Err(err("the release branch must be a single word"));
        }
        let mut spec = BackportSpec {
            release_branch: branch.to_owned(),
            request_column: DEFAULT_REQUEST_COLUMN.to_owned(),
            shipped_column: DEFAULT_SHIPPED_COLUMN.to_owned(),
            rejection_milestone: None,
        };
        if let Some(options) = options {
            let inner = options
                .strip_prefix('(')
                .and_then(|o| o.strip_suffix(')'))
                .ok_or_else(|| err("unbalanced parentheses"))?;
            for option in inner.split(';').map(str::trim).filter(|o| !o.is_empty()) {
                let (key, value) = option.split_once(':').ok_or_else(|| err("options must be `key: value`"))?;
                let (key, value) = (key.trim().to_lowercase(), value.trim());
                if value.is_empty() {
                    return Err(err(&format!("empty value for {key}")));
                }
                match key.as_str() {
                    "request inclusion column" => spec.request_column = value.to_owned(),
                    "shipped column" => spec.shipped_column = value.to_owned(),
                    "rejection milestone" => {
                        let n = value.trim_start_matches('#').parse().map_err(|_| err("rejection milestone must be a number"))?;
                        spec.rejection_milestone = Some(n);
                    }
                    other => return Err(err(&format!("unknown option {other:?}"))),
                }
            }
        }
        if spec.request_column == spec.shipped_column {
            return Err(err("request and shipped columns must differ"));
        }
        return Ok(Some(spec));
    }
    Ok(None)
}

/// Card for a merged PR whose milestone requests a backport.
pub fn on_pr_merged(repo: &RepoId, board: &str, snapshot: &PrSnapshot, spec: Option<&BackportSpec>) -> Vec<Action> {
    match (snapshot.state, spec) {
        (PrState::Merged, Some(spec)) => vec![Action::AddCardToColumn {
            repo: repo.clone(),
            board: board.to_owned(),
            column: spec.request_column.clone(),
            pr_number: snapshot.number,
        }],
        _ => Vec::new(),
    }
}

/// PR numbers referenced by a pushed commit: `Merge PR #n` titles directly,
/// cherry-pick trailers through `merge_commit_owner`.
pub fn referenced_prs(commit: &PushedCommit, merge_commit_owner: &dyn Fn(&str) -> Option<u64>) -> Vec<u64> {
    let title = Regex::new(r"^Merge PR #(\d+)").expect("title regex");
    let trailer = Regex::new(r"\(cherry picked from commit ([0-9a-f]{40})\)").expect("trailer regex");
    let mut prs = Vec::new();
    if let Some(c) = commit.message.lines().next().and_then(|l| title.captures(l)) {
        if let Ok(n) = c[1].parse() {
            prs.push(n);
        }
    }
    for c in trailer.captures_iter(&commit.message) {
        if let Some(n) = merge_commit_owner(&c[1]) {
            prs.push(n);
        }
    }
    prs
}

/// Moves pending cards of PRs shipped by this push.
pub fn on_release_push(
    repo: &RepoId,
    spec: &BackportSpec,
    commits: &[PushedCommit],
    cards: &[BoardCard],
    merge_commit_owner: &dyn Fn(&str) -> Option<u64>,
) -> Vec<Action> {
    let mut moved = BTreeSet::new();
    let mut actions = Vec::new();
    for commit in commits {
        for pr in referenced_prs(commit, merge_commit_owner) {
            let pending = cards.iter().find(|c| c.pr_number == pr && c.column == spec.request_column);
            if let Some(card) = pending {
                if moved.insert(pr) {
                    actions.push(Action::MoveCard {
                        repo: repo.clone(),
                        board: card.board.clone(),
                        pr_number: pr,
                        column: spec.shipped_column.clone(),
                    });
                }
            }
        }
    }
    actions
}

/// Rejection of a pending backport by removal of its card.
pub fn on_card_removed(
    repo: &RepoId,
    pr_number: u64,
    removed_from: &str,
    spec: &BackportSpec,
    fallback_milestone: Option<u64>,
    template: &str,
) -> Vec<Action> {
    if removed_from != spec.request_column {
        return Vec::new();
    }
    let milestone = spec.rejection_milestone.or(fallback_milestone);
    let mut actions = Vec::new();
    if let Some(m) = milestone {
        actions.push(Action::SetMilestone { repo: repo.clone(), number: pr_number, milestone: m });
    }
    let body = render_template(
        template,
        &[
            ("pr_number", pr_number.to_string()),
            ("branch", spec.release_branch.clone()),
            ("milestone", milestone.map(|m| m.to_string()).unwrap_or_default()),
        ],
        &[],
    );
    actions.push(Action::PostComment { repo: repo.clone(), number: pr_number, body });
    actions
}

#[derive(Default)]
pub struct BackportTracker {
    /// Milestones whose malformed directive was already reported.
    reported: BTreeSet<u64>,
}

impl BackportTracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn spec_of(&mut self, ctx: &Context<'_>, pr: &PrSnapshot) -> Result<Option<BackportSpec>, Action> {
        let Some(milestone) = &pr.milestone else { return Ok(None) };
        match parse_milestone_metadata(&milestone.description, ctx.bot()) {
            Ok(spec) => Ok(spec),
            Err(e) => {
                ctx.note(e.to_string());
                if self.reported.insert(milestone.number) {
                    Err(Action::PostComment {
                        repo: ctx.source(),
                        number: pr.number,
                        body: format!(
                            "The milestone {:?} has a {}. Backport tracking is disabled for it until the description is fixed.",
                            milestone.title, e
                        ),
                    })
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn release_push(&mut self, ctx: &Context<'_>, branch: &str, commits: &[PushedCommit]) -> Result<Vec<Action>, WorkflowError> {
        let repo = ctx.source();
        let specs: Vec<BackportSpec> = ctx
            .forge
            .list_milestones(&repo)?
            .iter()
            .filter_map(|m| parse_milestone_metadata(&m.description, ctx.bot()).ok().flatten())
            .filter(|s| s.release_branch == branch)
            .collect();
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        let board = &ctx.repo.backport.board;
        let cards = ctx.forge.board_cards(&repo, board)?;
        let mut merge_commits = Vec::new();
        for card in &cards {
            if let Ok(pr) = ctx.forge.get_pr_snapshot(&repo, card.pr_number) {
                if let Some(sha) = pr.merge_commit {
                    merge_commits.push((sha.to_string(), pr.number));
                }
            }
        }
        let owner = |sha: &str| merge_commits.iter().find(|(s, _)| s == sha).map(|(_, n)| *n);
        let mut actions = Vec::new();
        for spec in &specs {
            for action in on_release_push(&repo, spec, commits, &cards, &owner) {
                if !actions.contains(&action) {
                    actions.push(action);
                }
            }
        }
        for commit in commits {
            for pr in referenced_prs(commit, &owner) {
                if !cards.iter().any(|c| c.pr_number == pr) {
                    ctx.note(format!("{} ships PR #{pr}, which has no backport card", commit.sha.short()));
                }
            }
        }
        Ok(actions)
    }
}

impl Workflow for BackportTracker {
    fn name(&self) -> &'static str {
        NAME
    }

    fn subscribes(&self, kind: EventKind) -> bool {
        matches!(kind, EventKind::PrClosed | EventKind::PushToBranch | EventKind::CardRemoved)
    }

    fn handle(&mut self, ctx: &Context<'_>, event: &Event) -> Result<Vec<Action>, WorkflowError> {
        let repo = ctx.source();
        if event.repo != repo {
            return Ok(Vec::new());
        }
        match &event.payload {
            EventPayload::PrClosed { number, merged: true } => {
                let pr = ctx.forge.get_pr_snapshot(&repo, *number)?;
                match self.spec_of(ctx, &pr) {
                    Ok(spec) => Ok(on_pr_merged(&repo, &ctx.repo.backport.board, &pr, spec.as_ref())),
                    Err(report) => Ok(vec![report]),
                }
            }
            EventPayload::PushToBranch { branch, commits, .. } => self.release_push(ctx, branch, commits),
            EventPayload::CardRemoved { board, column_id, pr_number, actor } => {
                if actor == ctx.bot() {
                    ctx.note("card removed by the bot itself");
                    return Ok(Vec::new());
                }
                if *board != ctx.repo.backport.board {
                    return Ok(Vec::new());
                }
                let Some(column) = ctx.forge.board_column_name(&repo, board, *column_id)? else {
                    ctx.note(format!("unknown column {column_id}"));
                    return Ok(Vec::new());
                };
                let pr = ctx.forge.get_pr_snapshot(&repo, *pr_number)?;
                let Ok(Some(spec)) = self.spec_of(ctx, &pr) else {
                    ctx.note(format!("PR #{pr_number} has no backport milestone"));
                    return Ok(Vec::new());
                };
                Ok(on_card_removed(
                    &repo,
                    *pr_number,
                    &column,
                    &spec,
                    ctx.repo.backport.rejection_milestone,
                    &ctx.repo.templates.backport_rejection,
                ))
            }
            _ => Ok(Vec::new()),
        }
    }
}
