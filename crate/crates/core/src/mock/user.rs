//! Things humans (and CI) do on the mock forge. Each operation mutates the
//! state and queues the webhook notification the real forge would send.

use std::collections::BTreeSet;

use crate::client::ForgeError;
use crate::model::{
    Commit, JobOutcome, JobStatus, Link, Milestone, PipelineStatus, PrState, RepoId, Sha, StatusState,
};

use super::state::{Board, Column, CommentRecord, ForgeState, IssueRecord, JobRecord, LabelEvent, Notification, PipelineRecord, PrRecord, RepoState, StatusRecord};

fn not_found(what: impl Into<String>) -> ForgeError {
    ForgeError::NotFound(what.into())
}

/// Parameters for a new pull request.
#[derive(Debug, Clone)]
pub struct NewPr {
    pub number: u64,
    pub title: String,
    pub author: String,
    pub head_branch: String,
    pub head: Sha,
    pub base_branch: String,
}

#[derive(Debug, Clone)]
pub struct FinishedJob {
    pub job_name: String,
    pub status: JobStatus,
    pub log: String,
    pub artifacts: Vec<Link>,
    pub script: Option<String>,
}

impl ForgeState {
    pub fn add_repo(&mut self, repo: RepoId) -> &mut RepoState {
        self.repos.entry(repo).or_default()
    }

    /// Creates a commit and optionally names it.
    pub fn commit(&mut self, alias: Option<&str>, parents: &[Sha], files: &[&str], message: &str) -> Result<Sha, ForgeError> {
        let files: BTreeSet<String> = files.iter().map(|f| f.to_string()).collect();
        let c = Commit::new(parents.to_vec(), files, message);
        let sha = c.sha.clone();
        self.commits.insert(c).map_err(|e| not_found(e.to_string()))?;
        if let Some(alias) = alias {
            self.aliases.insert(alias.to_owned(), sha.clone());
        }
        Ok(sha)
    }

    pub fn add_team(&mut self, org: &str, team: &str, members: &[&str]) {
        self.teams
            .entry(format!("{org}/{team}"))
            .or_default()
            .extend(members.iter().map(|m| m.to_string()));
    }

    pub fn add_milestone(&mut self, repo: &RepoId, milestone: Milestone) -> Result<(), ForgeError> {
        self.repo_mut(repo)?.milestones.insert(milestone.number, milestone);
        Ok(())
    }

    pub fn add_board(&mut self, repo: &RepoId, board: &str, columns: &[&str]) -> Result<(), ForgeError> {
        let mut cols = Vec::new();
        for name in columns {
            let id = self.fresh_id();
            cols.push(Column { id, name: name.to_string(), cards: Vec::new() });
        }
        self.repo_mut(repo)?.boards.insert(board.to_owned(), Board { columns: cols });
        Ok(())
    }

    /// Sets a branch without announcing it (seeding).
    pub fn set_branch(&mut self, repo: &RepoId, branch: &str, sha: Sha) -> Result<(), ForgeError> {
        if !self.commits.contains(&sha) {
            return Err(not_found(format!("commit {sha}")));
        }
        self.repo_mut(repo)?.branches.insert(branch.to_owned(), sha);
        Ok(())
    }

    pub fn open_pr(&mut self, repo: &RepoId, pr: NewPr) -> Result<(), ForgeError> {
        if !self.commits.contains(&pr.head) {
            return Err(not_found(format!("commit {}", pr.head)));
        }
        let r = self.repo_mut(repo)?;
        if r.prs.contains_key(&pr.number) || r.issues.contains_key(&pr.number) {
            return Err(ForgeError::Rejected { status: 422, message: format!("#{} already exists", pr.number) });
        }
        r.branches.insert(pr.head_branch.clone(), pr.head.clone());
        r.prs.insert(
            pr.number,
            PrRecord {
                number: pr.number,
                title: pr.title,
                author: pr.author.clone(),
                head_branch: pr.head_branch,
                head: pr.head,
                base_branch: pr.base_branch,
                labels: BTreeSet::new(),
                milestone: None,
                assignees: BTreeSet::new(),
                approved_reviews: 0,
                changes_requested_reviews: 0,
                state: PrState::Open,
                merge_commit: None,
            },
        );
        self.outbox.push(Notification::PullRequest {
            repo: repo.clone(),
            number: pr.number,
            action: "opened".into(),
            merged: false,
            sender: pr.author,
        });
        Ok(())
    }

    fn pr_mut(&mut self, repo: &RepoId, number: u64) -> Result<&mut PrRecord, ForgeError> {
        self.repo_mut(repo)?.prs.get_mut(&number).ok_or_else(|| not_found(format!("pull request #{number}")))
    }

    /// The author pushes a new head to the PR branch.
    pub fn push_pr(&mut self, repo: &RepoId, number: u64, head: Sha) -> Result<(), ForgeError> {
        if !self.commits.contains(&head) {
            return Err(not_found(format!("commit {head}")));
        }
        let pr = self.pr_mut(repo, number)?;
        pr.head = head.clone();
        let (branch, author) = (pr.head_branch.clone(), pr.author.clone());
        self.repo_mut(repo)?.branches.insert(branch, head);
        self.outbox.push(Notification::PullRequest {
            repo: repo.clone(),
            number,
            action: "synchronize".into(),
            merged: false,
            sender: author,
        });
        Ok(())
    }

    /// A maintainer pushes to a branch of the repository (base or release branch).
    pub fn push(&mut self, repo: &RepoId, branch: &str, head: Sha, pusher: &str) -> Result<(), ForgeError> {
        if !self.commits.contains(&head) {
            return Err(not_found(format!("commit {head}")));
        }
        let before = self.repo_mut(repo)?.branches.insert(branch.to_owned(), head.clone());
        let commits = self
            .commits
            .range(before.as_ref(), &head)
            .map_err(|e| not_found(e.to_string()))?
            .into_iter()
            .map(|c| crate::model::PushedCommit { sha: c.sha, message: c.message })
            .collect();
        self.outbox.push(Notification::Push {
            repo: repo.clone(),
            branch: branch.to_owned(),
            before,
            after: head,
            commits,
            pusher: pusher.to_owned(),
        });
        Ok(())
    }

    pub fn close_pr_by(&mut self, repo: &RepoId, number: u64, user: &str) -> Result<(), ForgeError> {
        let pr = self.pr_mut(repo, number)?;
        if pr.state != PrState::Open {
            return Ok(());
        }
        pr.state = PrState::Closed;
        self.outbox.push(Notification::PullRequest {
            repo: repo.clone(),
            number,
            action: "closed".into(),
            merged: false,
            sender: user.to_owned(),
        });
        Ok(())
    }

    pub fn open_issue(&mut self, repo: &RepoId, number: u64, author: &str, title: &str, body: &str) -> Result<(), ForgeError> {
        let r = self.repo_mut(repo)?;
        if r.prs.contains_key(&number) || r.issues.contains_key(&number) {
            return Err(ForgeError::Rejected { status: 422, message: format!("#{number} already exists") });
        }
        r.issues.insert(
            number,
            IssueRecord {
                number,
                title: title.to_owned(),
                author: author.to_owned(),
                body: body.to_owned(),
                labels: BTreeSet::new(),
                milestone: None,
                closed: false,
            },
        );
        self.outbox.push(Notification::IssueOpened {
            repo: repo.clone(),
            number,
            author: author.to_owned(),
            title: title.to_owned(),
            body: body.to_owned(),
        });
        Ok(())
    }

    /// Posts a comment as `author` and returns its id.
    pub fn comment(&mut self, repo: &RepoId, number: u64, author: &str, body: &str) -> Result<u64, ForgeError> {
        let now = self.now;
        let id = self.fresh_id();
        let r = self.repo_mut(repo)?;
        let (on_pr, issue_author) = match (r.prs.get(&number), r.issues.get(&number)) {
            (Some(pr), _) => (true, pr.author.clone()),
            (None, Some(issue)) => (false, issue.author.clone()),
            (None, None) => return Err(not_found(format!("issue or pull request #{number}"))),
        };
        r.comments.insert(
            id,
            CommentRecord { id, number, author: author.to_owned(), body: body.to_owned(), created_at: now },
        );
        self.outbox.push(Notification::IssueComment {
            repo: repo.clone(),
            number,
            on_pr,
            comment_id: id,
            action: "created".into(),
            author: author.to_owned(),
            body: body.to_owned(),
            issue_author,
        });
        Ok(id)
    }

    pub fn edit_comment(&mut self, repo: &RepoId, comment_id: u64, body: &str) -> Result<(), ForgeError> {
        let r = self.repo_mut(repo)?;
        let c = r.comments.get_mut(&comment_id).ok_or_else(|| not_found(format!("comment {comment_id}")))?;
        c.body = body.to_owned();
        let (number, author) = (c.number, c.author.clone());
        let (on_pr, issue_author) = match (r.prs.get(&number), r.issues.get(&number)) {
            (Some(pr), _) => (true, pr.author.clone()),
            (None, Some(issue)) => (false, issue.author.clone()),
            (None, None) => return Err(not_found(format!("issue or pull request #{number}"))),
        };
        self.outbox.push(Notification::IssueComment {
            repo: repo.clone(),
            number,
            on_pr,
            comment_id,
            action: "edited".into(),
            author,
            body: body.to_owned(),
            issue_author,
        });
        Ok(())
    }

    /// Human label edits; no webhook the bot listens to.
    pub fn set_label(&mut self, repo: &RepoId, number: u64, label: &str, present: bool) -> Result<(), ForgeError> {
        let now = self.now;
        let pr = self.pr_mut(repo, number)?;
        let changed = if present { pr.labels.insert(label.to_owned()) } else { pr.labels.remove(label) };
        if changed {
            self.repo_mut(repo)?.label_events.push(LabelEvent { number, label: label.to_owned(), added: present, at: now });
        }
        Ok(())
    }

    pub fn set_pr_milestone(&mut self, repo: &RepoId, number: u64, milestone: Option<u64>) -> Result<(), ForgeError> {
        if let Some(m) = milestone {
            if !self.repo(repo)?.milestones.contains_key(&m) {
                return Err(not_found(format!("milestone {m}")));
            }
        }
        self.pr_mut(repo, number)?.milestone = milestone;
        Ok(())
    }

    pub fn assign(&mut self, repo: &RepoId, number: u64, user: &str) -> Result<(), ForgeError> {
        self.pr_mut(repo, number)?.assignees.insert(user.to_owned());
        Ok(())
    }

    pub fn set_reviews(&mut self, repo: &RepoId, number: u64, approved: u32, changes_requested: u32) -> Result<(), ForgeError> {
        let pr = self.pr_mut(repo, number)?;
        pr.approved_reviews = approved;
        pr.changes_requested_reviews = changes_requested;
        Ok(())
    }

    pub fn set_status(&mut self, repo: &RepoId, sha: &Sha, context: &str, state: StatusState) -> Result<(), ForgeError> {
        self.repo_mut(repo)?.statuses.entry(sha.clone()).or_default().insert(
            context.to_owned(),
            StatusRecord { state, description: String::new(), target_url: None },
        );
        Ok(())
    }

    /// Someone removes a PR's card from a board.
    pub fn remove_card(&mut self, repo: &RepoId, board: &str, pr_number: u64, actor: &str) -> Result<(), ForgeError> {
        let b = self.repo_mut(repo)?.boards.get_mut(board).ok_or_else(|| not_found(format!("board {board}")))?;
        let column = b
            .columns
            .iter_mut()
            .find(|c| c.cards.contains(&pr_number))
            .ok_or_else(|| not_found(format!("card for #{pr_number}")))?;
        column.cards.retain(|n| *n != pr_number);
        let column_id = column.id;
        self.outbox.push(Notification::CardDeleted {
            repo: repo.clone(),
            board: board.to_owned(),
            column_id,
            pr_number,
            actor: actor.to_owned(),
        });
        Ok(())
    }

    /// A CI job on the mirror finishes for `sha`.
    pub fn finish_job(&mut self, repo: &RepoId, sha: &Sha, branch: &str, job: FinishedJob) -> Result<u64, ForgeError> {
        let job_id = self.fresh_id();
        let web_url = format!("https://gitlab.example/{}/-/jobs/{job_id}", repo.full_name());
        let outcome = JobOutcome {
            job_id,
            job_name: job.job_name.clone(),
            status: job.status,
            log: job.log,
            web_url,
            artifact_links: job.artifacts,
            script: job.script,
        };
        self.repo_mut(repo)?
            .jobs
            .insert(job_id, JobRecord { sha: sha.clone(), branch: branch.to_owned(), outcome });
        self.outbox.push(Notification::Job {
            repo: repo.clone(),
            job_id,
            job_name: job.job_name,
            sha: sha.clone(),
            branch: branch.to_owned(),
            status: job.status,
        });
        Ok(job_id)
    }

    pub fn finish_pipeline(&mut self, repo: &RepoId, sha: &Sha, branch: &str, status: PipelineStatus) -> Result<u64, ForgeError> {
        let pipeline_id = self.fresh_id();
        self.repo_mut(repo)?
            .pipelines
            .insert(pipeline_id, PipelineRecord { sha: sha.clone(), branch: branch.to_owned(), status });
        self.outbox.push(Notification::Pipeline {
            repo: repo.clone(),
            pipeline_id,
            sha: sha.clone(),
            branch: branch.to_owned(),
            status,
        });
        Ok(pipeline_id)
    }
}
