//! Bot configuration: TOML file format, defaults and whole-file validation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::parse_duration;
use crate::model::{LabelPrefixes, Provider, RepoId};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read configuration {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse configuration {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

fn default_handle() -> String {
    "coqbot".to_owned()
}
fn default_listen() -> String {
    "127.0.0.1:8000".to_owned()
}
fn default_capacity() -> usize {
    crate::gateway::DEFAULT_LEDGER_CAPACITY
}
fn default_stale_scan() -> String {
    "1d".to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_handle")]
    pub bot_handle: String,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub secrets: SecretRefs,
    #[serde(default)]
    pub labels: LabelPrefixes,
    #[serde(default = "default_capacity")]
    pub ledger_capacity: usize,
    #[serde(default = "default_stale_scan")]
    pub stale_scan_period: String,
    #[serde(default)]
    pub runner: Option<RunnerConfig>,
    #[serde(default)]
    pub repositories: Vec<RepoConfig>,
}

/// Names of environment variables holding secrets. Secret values never live in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecretRefs {
    pub github_token_env: String,
    pub gitlab_token_env: String,
    pub webhook_secret_env: String,
}

impl Default for SecretRefs {
    fn default() -> Self {
        SecretRefs {
            github_token_env: "BOT_GITHUB_TOKEN".into(),
            gitlab_token_env: "BOT_GITLAB_TOKEN".into(),
            webhook_secret_env: "BOT_WEBHOOK_SECRET".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoConfig {
    /// GitHub `owner/name`.
    pub repo: String,
    #[serde(default)]
    pub mirror: Option<MirrorConfig>,
    #[serde(default)]
    pub merge: MergePolicy,
    #[serde(default)]
    pub templates: Templates,
    #[serde(default)]
    pub stale: StaleConfig,
    #[serde(default)]
    pub ci: CiConfig,
    #[serde(default)]
    pub backport: BackportConfig,
}

fn default_prefix() -> String {
    "pr-".to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorConfig {
    /// GitLab `namespace/name`.
    pub repo: String,
    #[serde(default = "default_prefix")]
    pub branch_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergePolicy {
    pub require_kind_label: bool,
    pub forbid_needs_labels: bool,
    pub require_milestone: bool,
    pub require_assignee: bool,
    pub min_approvals: u32,
    pub forbid_changes_requested: bool,
    /// Empty means any base branch.
    pub allowed_base_branches: Vec<String>,
    pub require_ci_success: bool,
    pub forbid_self_merge: bool,
    /// `team` (in the repository owner's organization) or `org/team`.
    pub authorized_team: String,
}

impl Default for MergePolicy {
    fn default() -> Self {
        MergePolicy {
            require_kind_label: true,
            forbid_needs_labels: true,
            require_milestone: true,
            require_assignee: true,
            min_approvals: 1,
            forbid_changes_requested: true,
            allowed_base_branches: Vec::new(),
            require_ci_success: true,
            forbid_self_merge: false,
            authorized_team: "maintainers".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Templates {
    pub merge_commit: String,
    pub stale_warning: String,
    pub stale_closure: String,
    pub backport_rejection: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            merge_commit: "Merge PR #{number}: {title}\n\nReviewed-by: {assignee}".into(),
            stale_warning: "This PR has had merge conflicts (`needs: rebase`) for {days} days. \
                It will be closed automatically in {grace_days} days unless the conflicts are resolved."
                .into(),
            stale_closure: "Closing PR #{pr_number}: the merge conflicts were not resolved \
                {grace_days} days after the warning."
                .into(),
            backport_rejection: "The release manager decided not to backport this PR to {branch}. \
                Its milestone was changed accordingly; please update the milestone of any issue it fixes."
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaleConfig {
    pub label: String,
    pub warn_after_days: u32,
    pub grace_days: u32,
}

impl Default for StaleConfig {
    fn default() -> Self {
        StaleConfig { label: "needs: rebase".into(), warn_after_days: 30, grace_days: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CiConfig {
    pub docs_jobs: Vec<String>,
    pub reverse_dependency_jobs: Vec<String>,
    pub error_patterns: Vec<String>,
    /// Reproduction script when the job does not provide one. `{job}` and `{sha}` are substituted.
    pub repro_script_template: String,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            docs_jobs: Vec::new(),
            reverse_dependency_jobs: Vec::new(),
            error_patterns: crate::workflows::ci_bridge::DEFAULT_ERROR_PATTERNS.iter().map(|p| p.to_string()).collect(),
            repro_script_template: "./dev/ci/ci-wrapper.sh {job} # at {sha}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackportConfig {
    pub board: String,
    /// Fallback when the milestone directive names no rejection milestone.
    pub rejection_milestone: Option<u64>,
}

impl Default for BackportConfig {
    fn default() -> Self {
        BackportConfig { board: "Backport".into(), rejection_milestone: None }
    }
}

impl RepoConfig {
    pub fn repo_id(&self) -> RepoId {
        RepoId::parse_full_name(Provider::GitHub, &self.repo).expect("validated repository")
    }

    pub fn mirror_id(&self) -> Option<RepoId> {
        self.mirror
            .as_ref()
            .map(|m| RepoId::parse_full_name(Provider::GitLab, &m.repo).expect("validated mirror"))
    }

    /// `(org, team)` for the merge authorization check.
    pub fn authorized_team(&self) -> (String, String) {
        match self.merge.authorized_team.split_once('/') {
            Some((org, team)) => (org.to_owned(), team.to_owned()),
            None => (self.repo_id().owner().to_owned(), self.merge.authorized_team.clone()),
        }
    }
}

fn valid_env_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase() || c == '_')
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

impl Config {
    /// Parses TOML text and validates it, reporting every problem at once.
    pub fn from_toml(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// The effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if self.bot_handle.is_empty() || self.bot_handle.chars().any(char::is_whitespace) {
            errors.push(format!("bot_handle must be a non-empty login, got {:?}", self.bot_handle));
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            errors.push(format!("listen must be host:port, got {:?}", self.listen));
        }
        for (field, value) in [
            ("secrets.github_token_env", &self.secrets.github_token_env),
            ("secrets.gitlab_token_env", &self.secrets.gitlab_token_env),
            ("secrets.webhook_secret_env", &self.secrets.webhook_secret_env),
        ] {
            if !valid_env_name(value) {
                errors.push(format!("{field} must name an environment variable, not hold a secret (got {value:?})"));
            }
        }
        if self.labels.needs.is_empty() || self.labels.kind.is_empty() {
            errors.push("labels.needs and labels.kind must be non-empty prefixes".into());
        }
        if self.ledger_capacity == 0 {
            errors.push("ledger_capacity must be positive".into());
        }
        match parse_duration(&self.stale_scan_period) {
            Ok(d) if d < chrono::Duration::minutes(1) => {
                errors.push(format!("stale_scan_period must be at least 1 minute, got {:?}", self.stale_scan_period))
            }
            Ok(_) => {}
            Err(e) => errors.push(format!("stale_scan_period: {e}")),
        }
        if let Some(runner) = &self.runner {
            if url::Url::parse(&runner.url).is_err() {
                errors.push(format!("runner.url is not a URL: {:?}", runner.url));
            }
        }
        if self.repositories.is_empty() {
            errors.push("at least one [[repositories]] block is required".into());
        }
        let mut seen = BTreeSet::new();
        for (i, repo) in self.repositories.iter().enumerate() {
            let at = format!("repositories[{i}]");
            match RepoId::parse_full_name(Provider::GitHub, &repo.repo) {
                Ok(id) => {
                    if !seen.insert(id) {
                        errors.push(format!("{at}.repo {:?} is configured twice", repo.repo));
                    }
                }
                Err(e) => errors.push(format!("{at}.repo: {e}")),
            }
            if let Some(mirror) = &repo.mirror {
                if let Err(e) = RepoId::parse_full_name(Provider::GitLab, &mirror.repo) {
                    errors.push(format!("{at}.mirror.repo: {e}"));
                }
                if mirror.branch_prefix.is_empty() || mirror.branch_prefix.chars().any(char::is_whitespace) {
                    errors.push(format!("{at}.mirror.branch_prefix must be non-empty without whitespace"));
                }
            }
            let team = &repo.merge.authorized_team;
            if team.is_empty() || team.split('/').any(str::is_empty) || team.matches('/').count() > 1 {
                errors.push(format!("{at}.merge.authorized_team must be `team` or `org/team`, got {team:?}"));
            }
            if repo.merge.allowed_base_branches.iter().any(|b| b.trim().is_empty()) {
                errors.push(format!("{at}.merge.allowed_base_branches contains an empty branch name"));
            }
            for (name, template) in [
                ("merge_commit", &repo.templates.merge_commit),
                ("stale_warning", &repo.templates.stale_warning),
                ("stale_closure", &repo.templates.stale_closure),
                ("backport_rejection", &repo.templates.backport_rejection),
            ] {
                if template.trim().is_empty() {
                    errors.push(format!("{at}.templates.{name} must not be empty"));
                }
            }
            if repo.stale.label.is_empty() {
                errors.push(format!("{at}.stale.label must not be empty"));
            }
            if repo.stale.warn_after_days == 0 || repo.stale.grace_days == 0 {
                errors.push(format!("{at}.stale thresholds must be at least one day"));
            }
            for pattern in &repo.ci.error_patterns {
                if let Err(e) = regex::Regex::new(pattern) {
                    errors.push(format!("{at}.ci.error_patterns: {pattern:?} is not a valid regex: {e}"));
                }
            }
            if repo.backport.board.trim().is_empty() {
                errors.push(format!("{at}.backport.board must not be empty"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn repo(&self, repo: &RepoId) -> Option<&RepoConfig> {
        self.repositories.iter().find(|r| &r.repo_id() == repo || r.mirror_id().as_ref() == Some(repo))
    }

    /// Every repository events may come from: sources and mirrors.
    pub fn all_repos(&self) -> Vec<RepoId> {
        self.repositories
            .iter()
            .flat_map(|r| std::iter::once(r.repo_id()).chain(r.mirror_id()))
            .collect()
    }

    pub fn stale_scan_period(&self) -> chrono::Duration {
        parse_duration(&self.stale_scan_period).expect("validated period")
    }

    /// A single-repository configuration with defaults, convenient for tests.
    pub fn single(repo: &str, mirror: Option<&str>) -> Config {
        Config {
            bot_handle: default_handle(),
            listen: default_listen(),
            secrets: SecretRefs::default(),
            labels: LabelPrefixes::default(),
            ledger_capacity: default_capacity(),
            stale_scan_period: default_stale_scan(),
            runner: None,
            repositories: vec![RepoConfig {
                repo: repo.to_owned(),
                mirror: mirror.map(|m| MirrorConfig { repo: m.to_owned(), branch_prefix: default_prefix() }),
                merge: MergePolicy::default(),
                templates: Templates::default(),
                stale: StaleConfig::default(),
                ci: CiConfig::default(),
                backport: BackportConfig::default(),
            }],
        }
    }
}

/// Substitutes `{key}` placeholders. A line containing a list-valued key is
/// repeated once per value (and dropped when the list is empty).
pub fn render_template(template: &str, scalars: &[(&str, String)], lists: &[(&str, Vec<String>)]) -> String {
    let mut lines = Vec::new();
    for line in template.split('\n') {
        match lists.iter().find(|(k, _)| line.contains(&format!("{{{k}}}"))) {
            Some((key, values)) => {
                for v in values {
                    lines.push(substitute(&line.replace(&format!("{{{key}}}"), v), scalars));
                }
            }
            None => lines.push(substitute(line, scalars)),
        }
    }
    lines.join("\n")
}

fn substitute(line: &str, scalars: &[(&str, String)]) -> String {
    scalars.iter().fold(line.to_owned(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}
