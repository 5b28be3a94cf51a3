//! Line-oriented scenario scripts, run against the mock forge through the
//! real gateway and engine.
//!
//! ```text
//! scenario v1
//! config coq.toml
//! seed coq.json
//! act comment github:coq/coq 7 alice "@coqbot merge now"
//! expect-action PostComment number=7 body~NO_MILESTONE count=1
//! advance 1d
//! expect-state label github:coq/coq 7 "needs: rebase" present
//! ```
//!
//! Paths are relative to the script. Expectations look at the actions applied
//! since the last step that drove the system (`act`, `deliver`, `advance`).
//! Commit arguments accept an alias from the seed, a full sha, or `^branch`
//! for the current head of a branch in the step's repository. `name <alias>
//! <repo> <branch>` captures a branch head under an alias, and expectation
//! values of the form `alias:<name>` compare against that commit's sha.

use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::client::{ForgeError, ForgeReads};
use crate::clock::parse_duration;
use crate::config::Config;
use crate::engine::Transcript;
use crate::gateway::{Channel, RawDelivery, GITHUB_DELIVERY_HEADER, GITHUB_EVENT_HEADER, GITLAB_EVENT_HEADER};
use crate::model::{JobStatus, Link, PipelineStatus, PrState, RepoId, Sha, StatusState};

use super::harness::{Harness, HarnessError};
use super::seed::Seed;
use super::state::ForgeState;
use super::user::{FinishedJob, NewPr};

pub const HEADER: &str = "scenario v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub base_dir: PathBuf,
    pub steps: Vec<Step>,
}

/// Why a scenario stopped. `diff` holds expected versus observed detail for
/// expectation failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: usize,
    pub step: String,
    pub message: String,
    pub diff: Option<String>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: `{}`: {}", self.line, self.step, self.message)?;
        if let Some(diff) = &self.diff {
            write!(f, "\n{diff}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

fn err(step: &Step, message: impl Into<String>) -> ScenarioError {
    ScenarioError { line: step.line, step: step.words.join(" "), message: message.into(), diff: None }
}

impl Script {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Script, ScenarioError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            Some((i, l)) => {
                return Err(ScenarioError {
                    line: i + 1,
                    step: l.trim().to_owned(),
                    message: format!("expected `{HEADER}` header"),
                    diff: None,
                })
            }
            // An empty script is valid and does nothing.
            None => return Ok(Script { base_dir: base_dir.into(), steps: Vec::new() }),
        }
        let mut steps = Vec::new();
        for (i, l) in lines {
            let words = shlex::split(l.trim()).ok_or_else(|| ScenarioError {
                line: i + 1,
                step: l.trim().to_owned(),
                message: "unbalanced quotes".into(),
                diff: None,
            })?;
            steps.push(Step { line: i + 1, words });
        }
        Ok(Script { base_dir: base_dir.into(), steps })
    }

    pub fn load(path: &Path) -> Result<Script, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            line: 0,
            step: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
            diff: None,
        })?;
        Script::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Deliver every webhook twice with the same delivery id.
    pub duplicate_deliveries: bool,
}

/// Runs the script and returns the transcript with the final state digest.
pub fn run_scenario(script: &Script, options: RunOptions) -> Result<Transcript, ScenarioError> {
    let mut runner = Runner { script, options, config: None, seed: None, harness: None, window_start: 0 };
    for step in &script.steps {
        runner.step(step)?;
    }
    Ok(match &runner.harness {
        Some(h) => h.finish(),
        None => Transcript::default(),
    })
}

pub fn run_file(path: &Path, options: RunOptions) -> Result<Transcript, ScenarioError> {
    run_scenario(&Script::load(path)?, options)
}

struct Runner<'a> {
    script: &'a Script,
    options: RunOptions,
    config: Option<Config>,
    seed: Option<ForgeState>,
    harness: Option<Harness>,
    window_start: usize,
}

/// `key=value` options after the positional arguments.
fn options(words: &[String]) -> (Vec<&str>, Vec<(&str, &str)>) {
    let mut positional = Vec::new();
    let mut named = Vec::new();
    for w in words {
        match w.split_once('=') {
            Some((k, v)) if !k.is_empty() && !k.contains(char::is_whitespace) && !k.starts_with('@') => {
                named.push((k, v))
            }
            _ => positional.push(w.as_str()),
        }
    }
    (positional, named)
}

fn unescape(text: &str) -> String {
    text.replace("\\n", "\n")
}

fn parse_num(step: &Step, s: &str) -> Result<u64, ScenarioError> {
    s.parse().map_err(|_| err(step, format!("expected a number, got `{s}`")))
}

fn parse_repo(step: &Step, s: &str) -> Result<RepoId, ScenarioError> {
    s.parse().map_err(|e| err(step, format!("{e}")))
}

/// Lowercase enum names; GitLab's `failed` and `cancelled` are accepted too.
fn enum_value<T: serde::de::DeserializeOwned>(step: &Step, s: &str) -> Result<T, ScenarioError> {
    let normalized = match s.to_lowercase().as_str() {
        "failed" => "failure".to_owned(),
        "cancelled" => "canceled".to_owned(),
        other => other.to_owned(),
    };
    serde_json::from_value(Value::String(normalized)).map_err(|_| err(step, format!("unexpected value `{s}`")))
}

impl Runner<'_> {
    fn harness(&mut self, step: &Step) -> Result<&mut Harness, ScenarioError> {
        if self.harness.is_none() {
            let config = self.config.clone().ok_or_else(|| err(step, "no `config` step before the first action"))?;
            let seed = self.seed.take().ok_or_else(|| err(step, "no `seed` step before the first action"))?;
            self.harness = Some(Harness::new(config, seed).with_duplicate_deliveries(self.options.duplicate_deliveries));
        }
        Ok(self.harness.as_mut().expect("harness just built"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.script.base_dir.join(name)
    }

    fn read(&self, step: &Step, name: &str) -> Result<String, ScenarioError> {
        std::fs::read_to_string(self.path(name)).map_err(|e| err(step, format!("cannot read {name}: {e}")))
    }

    fn step(&mut self, step: &Step) -> Result<(), ScenarioError> {
        let Some(verb) = step.words.first() else { return Ok(()) };
        let args = &step.words[1..];
        match verb.as_str() {
            "config" => {
                if self.harness.is_some() {
                    return Err(err(step, "`config` must come before the first action"));
                }
                let [file] = args else { return Err(err(step, "usage: config <file.toml>")) };
                let text = self.read(step, file)?;
                let config = Config::from_toml(&text, &self.path(file).display().to_string())
                    .map_err(|e| err(step, e.to_string()))?;
                self.config = Some(config);
                Ok(())
            }
            "seed" => {
                if self.harness.is_some() {
                    return Err(err(step, "`seed` must come before the first action"));
                }
                let [file] = args else { return Err(err(step, "usage: seed <file.json>")) };
                let text = self.read(step, file)?;
                let state = Seed::parse(&text).and_then(|s| s.build()).map_err(|e| err(step, e.to_string()))?;
                self.seed = Some(state);
                Ok(())
            }
            "deliver" => {
                let delivery = self.delivery(step, args)?;
                self.drive(step, |h| h.deliver(delivery).map(|_| ()))
            }
            "advance" => {
                let [d] = args else { return Err(err(step, "usage: advance <duration>")) };
                let d = parse_duration(d).map_err(|e| err(step, e))?;
                self.drive(step, |h| h.advance(d))
            }
            "act" => self.act(step, args),
            "name" => {
                let [alias, repo, branch] = args else {
                    return Err(err(step, "usage: name <alias> <repo> <branch>"));
                };
                let repo = parse_repo(step, repo)?;
                let harness = self.harness(step)?;
                let mut state = harness.forge().state();
                let sha = state
                    .branch_head(&repo, branch)
                    .map_err(|e| err(step, e.to_string()))?
                    .ok_or_else(|| err(step, format!("no branch {branch} in {repo}")))?;
                state.aliases.insert(alias.clone(), sha);
                Ok(())
            }
            "expect-action" => self.expect_action(step, args),
            "expect-no-action" => {
                let (positional, named) = options(args);
                let mut words: Vec<String> = positional.iter().map(|s| s.to_string()).collect();
                words.extend(named.iter().map(|(k, v)| format!("{k}={v}")));
                words.push("count=0".into());
                self.expect_action(step, &words)
            }
            "expect-state" => self.expect_state(step, args),
            other => Err(err(step, format!("unknown step `{other}`"))),
        }
    }

    fn drive(&mut self, step: &Step, f: impl FnOnce(&mut Harness) -> Result<(), HarnessError>) -> Result<(), ScenarioError> {
        let harness = self.harness(step)?;
        self.window_start = harness.transcript().actions().count();
        let harness = self.harness.as_mut().expect("harness exists");
        f(harness).map_err(|e| err(step, e.to_string()))
    }

    /// `deliver github <event> <file> [delivery-id]` or `deliver gitlab <event> <file> [delivery-id]`.
    fn delivery(&mut self, step: &Step, args: &[String]) -> Result<RawDelivery, ScenarioError> {
        let (channel, kind, file, id) = match args {
            [c, k, f] => (c, k, f, None),
            [c, k, f, id] => (c, k, f, Some(id.clone())),
            _ => return Err(err(step, "usage: deliver <github|gitlab> <event> <payload.json> [delivery-id]")),
        };
        let body = self.read(step, file)?;
        serde_json::from_str::<Value>(&body).map_err(|e| err(step, format!("{file} is not JSON: {e}")))?;
        let id = id.unwrap_or_else(|| format!("scenario-line-{}", step.line));
        let now = self.harness(step)?.now();
        Ok(match channel.as_str() {
            "github" => RawDelivery::new(
                Channel::GitHub,
                [(GITHUB_EVENT_HEADER, kind.clone()), (GITHUB_DELIVERY_HEADER, id)],
                body.into_bytes(),
                now,
            ),
            "gitlab" => RawDelivery::new(
                Channel::GitLab,
                [(GITLAB_EVENT_HEADER, kind.clone()), (crate::gateway::GITLAB_DELIVERY_HEADER, id)],
                body.into_bytes(),
                now,
            ),
            other => return Err(err(step, format!("unknown channel `{other}`"))),
        })
    }

    fn act(&mut self, step: &Step, args: &[String]) -> Result<(), ScenarioError> {
        let (positional, named) = options(args);
        let Some((&op, rest)) = positional.split_first() else {
            return Err(err(step, "usage: act <operation> ..."));
        };
        let opt = |key: &str| named.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let repo_at = |i: usize| -> Result<RepoId, ScenarioError> {
            rest.get(i).ok_or_else(|| err(step, "missing repository")).and_then(|s| parse_repo(step, s))
        };
        let arg = |i: usize, what: &str| -> Result<&str, ScenarioError> {
            rest.get(i).copied().ok_or_else(|| err(step, format!("missing {what}")))
        };
        let num = |i: usize, what: &str| -> Result<u64, ScenarioError> { parse_num(step, arg(i, what)?) };
        let resolve = |state: &ForgeState, repo: &RepoId, name: &str| -> Result<Sha, ForgeError> {
            match name.strip_prefix('^') {
                Some(branch) => state
                    .branch_head(repo, branch)?
                    .ok_or_else(|| ForgeError::NotFound(format!("branch {branch} in {repo}"))),
                None => state.resolve(name).ok_or_else(|| ForgeError::NotFound(format!("commit {name}"))),
            }
        };

        match op {
            "commit" => {
                let alias = arg(0, "alias")?.to_owned();
                let parents: Vec<String> =
                    opt("parents").map(|p| p.split(',').map(str::to_owned).collect()).unwrap_or_default();
                let files: Vec<String> =
                    opt("files").map(|p| p.split(',').map(str::to_owned).collect()).unwrap_or_default();
                let message = opt("message").map(unescape).unwrap_or_else(|| alias.clone());
                self.drive(step, |h| {
                    h.act(|s| {
                        let parents = parents.iter().map(|p| s.resolve(p).ok_or_else(|| ForgeError::NotFound(format!("commit {p}")))).collect::<Result<Vec<_>, _>>()?;
                        let files: Vec<&str> = files.iter().map(String::as_str).collect();
                        s.commit(Some(&alias), &parents, &files, &message).map(|_| ())
                    })
                })
            }
            "open-pr" => {
                let repo = repo_at(0)?;
                let number = num(1, "PR number")?;
                let author = arg(2, "author")?.to_owned();
                let head = arg(3, "head commit")?.to_owned();
                let base = opt("base").unwrap_or("master").to_owned();
                let title = opt("title").map(unescape).unwrap_or_else(|| format!("PR {number}"));
                let head_branch = opt("branch").map(str::to_owned).unwrap_or_else(|| format!("pr-{number}"));
                self.drive(step, |h| {
                    h.act(|s| {
                        let head = resolve(s, &repo, &head)?;
                        s.open_pr(&repo, NewPr { number, title, author, head_branch, head, base_branch: base })
                    })
                })
            }
            "push-pr" => {
                let repo = repo_at(0)?;
                let number = num(1, "PR number")?;
                let head = arg(2, "commit")?.to_owned();
                self.drive(step, |h| {
                    h.act(|s| {
                        let head = resolve(s, &repo, &head)?;
                        s.push_pr(&repo, number, head)
                    })
                })
            }
            "push" => {
                let repo = repo_at(0)?;
                let branch = arg(1, "branch")?.to_owned();
                let head = arg(2, "commit")?.to_owned();
                let pusher = arg(3, "pusher")?.to_owned();
                self.drive(step, |h| {
                    h.act(|s| {
                        let head = resolve(s, &repo, &head)?;
                        s.push(&repo, &branch, head, &pusher)
                    })
                })
            }
            "close-pr" => {
                let repo = repo_at(0)?;
                let number = num(1, "PR number")?;
                let user = arg(2, "user")?.to_owned();
                self.drive(step, |h| h.act(|s| s.close_pr_by(&repo, number, &user)))
            }
            "open-issue" => {
                let repo = repo_at(0)?;
                let number = num(1, "issue number")?;
                let author = arg(2, "author")?.to_owned();
                let body = unescape(arg(3, "body")?);
                let title = opt("title").map(unescape).unwrap_or_else(|| format!("Issue {number}"));
                self.drive(step, |h| h.act(|s| s.open_issue(&repo, number, &author, &title, &body)))
            }
            "comment" => {
                let repo = repo_at(0)?;
                let number = num(1, "number")?;
                let author = arg(2, "author")?.to_owned();
                let body = unescape(arg(3, "body")?);
                self.drive(step, |h| h.act(|s| s.comment(&repo, number, &author, &body).map(|_| ())))
            }
            "edit-comment" => {
                let repo = repo_at(0)?;
                let id = num(1, "comment id")?;
                let body = unescape(arg(2, "body")?);
                self.drive(step, |h| h.act(|s| s.edit_comment(&repo, id, &body)))
            }
            "label" | "unlabel" => {
                let repo = repo_at(0)?;
                let number = num(1, "number")?;
                let label = arg(2, "label")?.to_owned();
                let present = op == "label";
                self.drive(step, |h| h.act(|s| s.set_label(&repo, number, &label, present)))
            }
            "milestone" => {
                let repo = repo_at(0)?;
                let number = num(1, "number")?;
                let milestone = match arg(2, "milestone")? {
                    "none" => None,
                    m => Some(parse_num(step, m)?),
                };
                self.drive(step, |h| h.act(|s| s.set_pr_milestone(&repo, number, milestone)))
            }
            "assign" => {
                let repo = repo_at(0)?;
                let number = num(1, "number")?;
                let user = arg(2, "user")?.to_owned();
                self.drive(step, |h| h.act(|s| s.assign(&repo, number, &user)))
            }
            "reviews" => {
                let repo = repo_at(0)?;
                let number = num(1, "number")?;
                let approved = num(2, "approvals")? as u32;
                let changes = num(3, "change requests")? as u32;
                self.drive(step, |h| h.act(|s| s.set_reviews(&repo, number, approved, changes)))
            }
            "status" => {
                let repo = repo_at(0)?;
                let sha = arg(1, "commit")?.to_owned();
                let context = arg(2, "context")?.to_owned();
                let state: StatusState = enum_value(step, arg(3, "state")?)?;
                self.drive(step, |h| {
                    h.act(|s| {
                        let sha = resolve(s, &repo, &sha)?;
                        s.set_status(&repo, &sha, &context, state)
                    })
                })
            }
            "remove-card" => {
                let repo = repo_at(0)?;
                let board = arg(1, "board")?.to_owned();
                let pr = num(2, "PR number")?;
                let actor = arg(3, "actor")?.to_owned();
                self.drive(step, |h| h.act(|s| s.remove_card(&repo, &board, pr, &actor)))
            }
            "finish-job" => {
                let repo = repo_at(0)?;
                let branch = arg(1, "branch")?.to_owned();
                let sha = opt("sha").map(str::to_owned).unwrap_or_else(|| format!("^{branch}"));
                let job_name = arg(2, "job name")?.to_owned();
                let status: JobStatus = enum_value(step, arg(3, "status")?)?;
                let log = opt("log").map(unescape).unwrap_or_default();
                let script = opt("script").map(unescape);
                let artifacts: Vec<Link> = named
                    .iter()
                    .filter(|(k, _)| *k == "artifact")
                    .filter_map(|(_, v)| v.split_once('|'))
                    .map(|(name, url)| Link { name: name.to_owned(), url: url.to_owned() })
                    .collect();
                self.drive(step, |h| {
                    h.act(|s| {
                        let sha = resolve(s, &repo, &sha)?;
                        s.finish_job(&repo, &sha, &branch, FinishedJob { job_name, status, log, artifacts, script })
                            .map(|_| ())
                    })
                })
            }
            "finish-pipeline" => {
                let repo = repo_at(0)?;
                let branch = arg(1, "branch")?.to_owned();
                let sha = opt("sha").map(str::to_owned).unwrap_or_else(|| format!("^{branch}"));
                let status: PipelineStatus = enum_value(step, arg(2, "status")?)?;
                self.drive(step, |h| {
                    h.act(|s| {
                        let sha = resolve(s, &repo, &sha)?;
                        s.finish_pipeline(&repo, &sha, &branch, status).map(|_| ())
                    })
                })
            }
            "runner-result" => {
                let script = unescape(arg(0, "script")?);
                let result = match (opt("reduced"), opt("failed")) {
                    (Some(r), _) => crate::model::RunnerResult::Reduced { reduced_case: unescape(r) },
                    (None, Some(f)) => crate::model::RunnerResult::Failed { diagnostic: unescape(f) },
                    _ => return Err(err(step, "runner-result needs reduced=... or failed=...")),
                };
                self.drive(step, |h| {
                    h.act(|s| {
                        s.runner.canned.insert(script, result);
                        Ok(())
                    })
                })
            }
            other => Err(err(step, format!("unknown operation `{other}`"))),
        }
    }

    fn window(&mut self, step: &Step) -> Result<Vec<(String, Value, String)>, ScenarioError> {
        let transcript = self.harness(step)?.transcript();
        Ok(transcript
            .actions()
            .skip(self.window_start)
            .map(|(_, run, applied)| {
                let value = serde_json::to_value(&applied.action).expect("action serializes");
                (run.workflow.clone(), value, applied.result.status.to_string())
            })
            .collect())
    }

    /// `expect-action <Kind> [key=value | key~substring]... [count=N]`
    ///
    /// Without `count`, at least one matching action is required.
    fn expect_action(&mut self, step: &Step, args: &[String]) -> Result<(), ScenarioError> {
        let Some((kind, filters)) = args.split_first() else {
            return Err(err(step, "usage: expect-action <Kind> [key=value]... [count=N]"));
        };
        let mut count = None;
        let mut conditions = Vec::new();
        for f in filters {
            if let Some((k, v)) = f.split_once('~').filter(|(k, _)| !k.contains('=')) {
                conditions.push((k.to_owned(), unescape(v), true));
            } else if let Some((k, v)) = f.split_once('=') {
                if k == "count" {
                    count = Some(parse_num(step, v)? as usize);
                } else {
                    conditions.push((k.to_owned(), unescape(v), false));
                }
            } else {
                return Err(err(step, format!("bad filter `{f}`")));
            }
        }
        for (_, expected, _) in conditions.iter_mut() {
            if let Some(alias) = expected.strip_prefix("alias:") {
                let sha = self.harness(step)?.forge().state().resolve(alias);
                *expected = sha.ok_or_else(|| err(step, format!("unknown alias {alias}")))?.to_string();
            }
        }
        let window = self.window(step)?;
        let matches = window
            .iter()
            .filter(|(wf, value, status)| {
                (kind == "*" || value.get("action").and_then(Value::as_str) == Some(kind.as_str()))
                    && conditions.iter().all(|(key, expected, substring)| {
                        let actual = match key.as_str() {
                            "wf" => wf.clone(),
                            "result" => status.clone(),
                            _ => match value.get(key) {
                                Some(Value::String(s)) => s.clone(),
                                Some(Value::Null) | None => "null".into(),
                                Some(other) => other.to_string(),
                            },
                        };
                        if *substring {
                            actual.contains(expected.as_str())
                        } else {
                            actual == *expected
                        }
                    })
            })
            .count();
        let ok = match count {
            Some(n) => matches == n,
            None => matches >= 1,
        };
        if ok {
            return Ok(());
        }
        let expected = match count {
            Some(n) => format!("exactly {n} matching action(s)"),
            None => "at least one matching action".into(),
        };
        let observed: Vec<String> = window
            .iter()
            .map(|(wf, value, status)| format!("  {wf} {value} -> {status}"))
            .collect();
        Err(ScenarioError {
            line: step.line,
            step: step.words.join(" "),
            message: format!("expected {expected}, found {matches}"),
            diff: Some(format!(
                "- expected: {} {}\n+ observed actions since last step:\n{}",
                kind,
                filters.join(" "),
                if observed.is_empty() { "  (none)".to_owned() } else { observed.join("\n") }
            )),
        })
    }

    fn expect_state(&mut self, step: &Step, args: &[String]) -> Result<(), ScenarioError> {
        let Some((predicate, rest)) = args.split_first() else {
            return Err(err(step, "usage: expect-state <predicate> <args>..."));
        };
        let arg = |i: usize| rest.get(i).map(String::as_str).ok_or_else(|| err(step, "missing argument"));
        let repo = parse_repo(step, arg(0)?)?;
        let harness = self.harness(step)?;
        let state = harness.forge().state().clone();
        let mismatch = |expected: String, observed: String| ScenarioError {
            line: step.line,
            step: step.words.join(" "),
            message: format!("state predicate `{predicate}` does not hold"),
            diff: Some(format!("- expected: {expected}\n+ observed: {observed}")),
        };
        let forge_err = |e: ForgeError| err(step, e.to_string());
        match predicate.as_str() {
            "label" => {
                let number = parse_num(step, arg(1)?)?;
                let label = arg(2)?;
                let want = arg(3).unwrap_or("present") == "present";
                let snap = state.get_pr_snapshot(&repo, number).map_err(forge_err)?;
                let has = snap.has_label(label);
                if has != want {
                    let names: Vec<&str> = snap.labels.iter().map(|l| l.name.as_str()).collect();
                    return Err(mismatch(format!("{label} {}", arg(3).unwrap_or("present")), format!("labels {names:?}")));
                }
            }
            "milestone" => {
                let number = parse_num(step, arg(1)?)?;
                let want = match arg(2)? {
                    "none" => None,
                    m => Some(parse_num(step, m)?),
                };
                let got = state.get_pr_snapshot(&repo, number).map_err(forge_err)?.milestone.map(|m| m.number);
                if got != want {
                    return Err(mismatch(format!("{want:?}"), format!("{got:?}")));
                }
            }
            "pr-state" => {
                let number = parse_num(step, arg(1)?)?;
                let want: PrState = enum_value(step, arg(2)?)?;
                let got = state.get_pr_snapshot(&repo, number).map_err(forge_err)?.state;
                if got != want {
                    return Err(mismatch(format!("{want:?}"), format!("{got:?}")));
                }
            }
            "branch" => {
                let branch = arg(1)?;
                let got = state.branch_head(&repo, branch).map_err(forge_err)?;
                let want = match arg(2)? {
                    "absent" => None,
                    other => match other.strip_prefix('^') {
                        Some(b) => state.branch_head(&repo, b).map_err(forge_err)?,
                        None => Some(state.resolve(other).ok_or_else(|| err(step, format!("unknown commit {other}")))?),
                    },
                };
                if got != want {
                    return Err(mismatch(format!("{want:?}"), format!("{got:?}")));
                }
            }
            "card" => {
                let board = arg(1)?;
                let number = parse_num(step, arg(2)?)?;
                let want = arg(3)?;
                let cards = state.board_cards(&repo, board).map_err(forge_err)?;
                let got = cards.iter().find(|c| c.pr_number == number).map(|c| c.column.as_str()).unwrap_or("absent");
                if got != want {
                    return Err(mismatch(want.to_owned(), got.to_owned()));
                }
            }
            "comments" => {
                let number = parse_num(step, arg(1)?)?;
                let want = parse_num(step, arg(2)?)? as usize;
                let r = state.repo(&repo).map_err(forge_err)?;
                let got = r.comments.values().filter(|c| c.number == number && c.author == state.bot_login).count();
                if got != want {
                    return Err(mismatch(format!("{want} bot comment(s)"), format!("{got}")));
                }
            }
            "last-comment" => {
                let number = parse_num(step, arg(1)?)?;
                let needle = unescape(arg(2)?);
                let r = state.repo(&repo).map_err(forge_err)?;
                let last = r.comments.values().rfind(|c| c.number == number).map(|c| c.body.clone());
                if !last.as_deref().is_some_and(|b| b.contains(&needle)) {
                    return Err(mismatch(format!("last comment containing {needle:?}"), format!("{last:?}")));
                }
            }
            "merged" => {
                let number = parse_num(step, arg(1)?)?;
                let r = state.repo(&repo).map_err(forge_err)?;
                let pr = r.prs.get(&number).ok_or_else(|| err(step, format!("no PR #{number}")))?;
                let Some(sha) = &pr.merge_commit else {
                    return Err(mismatch("merged".into(), format!("{:?}", pr.state)));
                };
                let commit = state.commits.get(sha).ok_or_else(|| err(step, "merge commit missing"))?;
                let signed = r.signed_commits.contains(sha);
                if let Some(msg) = rest.get(2) {
                    if commit.message != unescape(msg) {
                        return Err(mismatch(format!("message {:?}", unescape(msg)), format!("message {:?}", commit.message)));
                    }
                }
                if rest.iter().any(|a| a == "signed") && !signed {
                    return Err(mismatch("signed merge commit".into(), "unsigned".into()));
                }
                if commit.parents.len() != 2 {
                    return Err(mismatch("two parents".into(), format!("{} parent(s)", commit.parents.len())));
                }
            }
            other => return Err(err(step, format!("unknown predicate `{other}`"))),
        }
        Ok(())
    }
}
