//! JSON seed files describing an initial mock forge. Commits are named by
//! alias; anywhere a sha is expected the alias may be used instead.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::client::ForgeError;
use crate::model::{Milestone, PrState, RepoId, RunnerResult, Sha, StatusState, Timestamp};

use super::state::ForgeState;
use super::user::NewPr;

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("seed is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("seed refers to unknown commit `{0}`")]
    UnknownCommit(String),
    #[error("seed is inconsistent: {0}")]
    Forge(#[from] ForgeError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seed {
    pub now: Timestamp,
    #[serde(default = "default_bot")]
    pub bot: String,
    #[serde(default)]
    pub teams: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub commits: Vec<SeedCommit>,
    #[serde(default)]
    pub repos: Vec<SeedRepo>,
    #[serde(default)]
    pub runner: BTreeMap<String, RunnerResult>,
}

fn default_bot() -> String {
    "coqbot".to_owned()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedCommit {
    pub alias: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub message: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRepo {
    pub repo: RepoId,
    #[serde(default)]
    pub branches: BTreeMap<String, String>,
    #[serde(default)]
    pub milestones: Vec<Milestone>,
    /// Board name to column names, in order.
    #[serde(default)]
    pub boards: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub prs: Vec<SeedPr>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPr {
    pub number: u64,
    pub title: String,
    pub author: String,
    pub head: String,
    #[serde(default)]
    pub head_branch: Option<String>,
    #[serde(default = "default_base")]
    pub base: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub milestone: Option<u64>,
    #[serde(default)]
    pub assignees: Vec<String>,
    #[serde(default)]
    pub approvals: u32,
    #[serde(default)]
    pub changes_requested: u32,
    /// Commit statuses on the head, by context.
    #[serde(default)]
    pub statuses: BTreeMap<String, StatusState>,
}

fn default_base() -> String {
    "master".to_owned()
}

impl Seed {
    pub fn parse(text: &str) -> Result<Self, SeedError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the forge state. Nothing is announced: the outbox starts empty.
    pub fn build(&self) -> Result<ForgeState, SeedError> {
        let mut state = ForgeState::new(self.now, &self.bot);
        for (team, members) in &self.teams {
            let (org, name) = team.split_once('/').unwrap_or((team.as_str(), ""));
            let members: Vec<&str> = members.iter().map(String::as_str).collect();
            state.add_team(org, name, &members);
        }
        for c in &self.commits {
            let parents = c.parents.iter().map(|p| lookup(&state, p)).collect::<Result<Vec<Sha>, _>>()?;
            let files: Vec<&str> = c.files.iter().map(String::as_str).collect();
            let message = c.message.clone().unwrap_or_else(|| c.alias.clone());
            state.commit(Some(&c.alias), &parents, &files, &message)?;
        }
        for r in &self.repos {
            state.add_repo(r.repo.clone());
            for (branch, commit) in &r.branches {
                let sha = lookup(&state, commit)?;
                state.set_branch(&r.repo, branch, sha)?;
            }
            for m in &r.milestones {
                state.add_milestone(&r.repo, m.clone())?;
            }
            for (board, columns) in &r.boards {
                let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
                state.add_board(&r.repo, board, &columns)?;
            }
            for pr in &r.prs {
                let head = lookup(&state, &pr.head)?;
                state.open_pr(
                    &r.repo,
                    NewPr {
                        number: pr.number,
                        title: pr.title.clone(),
                        author: pr.author.clone(),
                        head_branch: pr.head_branch.clone().unwrap_or_else(|| format!("pr-{}", pr.number)),
                        head: head.clone(),
                        base_branch: pr.base.clone(),
                    },
                )?;
                for label in &pr.labels {
                    state.set_label(&r.repo, pr.number, label, true)?;
                }
                state.set_pr_milestone(&r.repo, pr.number, pr.milestone)?;
                for user in &pr.assignees {
                    state.assign(&r.repo, pr.number, user)?;
                }
                state.set_reviews(&r.repo, pr.number, pr.approvals, pr.changes_requested)?;
                for (context, status) in &pr.statuses {
                    state.set_status(&r.repo, &head, context, *status)?;
                }
                debug_assert_eq!(state.repo(&r.repo)?.prs[&pr.number].state, PrState::Open);
            }
        }
        state.runner.canned = self.runner.clone();
        state.outbox.clear();
        Ok(state)
    }
}

fn lookup(state: &ForgeState, name: &str) -> Result<Sha, SeedError> {
    state.resolve(name).ok_or_else(|| SeedError::UnknownCommit(name.to_owned()))
}
