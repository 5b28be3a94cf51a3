//! Acceptance suite. Runs every criterion against the mock forge, prints one
//! `criterion N: PASS|FAIL` line each, and exits non-zero if any failed.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use chrono::Duration;
use forgebot::client::contract::{run_contract, ContractFixture};
use forgebot::client::{ActionResult, ActionStatus, ForgeReads};
use forgebot::gateway::{sign, verify_signature};
use forgebot::mock::harness::Harness;
use forgebot::mock::scenario::{run_file, RunOptions};
use forgebot::mock::seed::Seed;
use forgebot::mock::{FinishedJob, ForgeState, MockForge, NewPr};
use forgebot::model::{
    Action, CheckConclusion, CiVerdict, GitRef, JobStatus, LabelPrefixes, Link, Mergeability, Milestone, PipelineStatus,
    PrSnapshot, PrState, RepoId, Sha,
};
use forgebot::workflows::merge_service::{evaluate_policy, violation_report, ViolationCode};
use forgebot::workflows::minimizer::proposal_command;
use forgebot::config::MergePolicy;
use forgebot::Config;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn corpus() -> PathBuf {
    manifest().join("tests/scenarios")
}

fn gh() -> RepoId {
    RepoId::github("coq", "coq")
}

fn gl() -> RepoId {
    RepoId::gitlab("coq", "coq")
}

fn coq_harness() -> Harness {
    let config = Config::load(&corpus().join("coq.toml")).unwrap();
    let seed = Seed::parse(&std::fs::read_to_string(corpus().join("coq.json")).unwrap()).unwrap();
    Harness::new(config, seed.build().unwrap())
}

/// Actions applied since the last call.
struct Window {
    seen: usize,
}

#[derive(Debug, Clone)]
struct Applied {
    workflow: String,
    action: Action,
    result: ActionResult,
}

impl Window {
    fn new(h: &Harness) -> Self {
        Window { seen: h.transcript().actions().count() }
    }

    fn take(&mut self, h: &Harness) -> Vec<Applied> {
        let transcript = h.transcript();
        let out: Vec<Applied> = transcript
            .actions()
            .skip(self.seen)
            .map(|(_, run, a)| Applied { workflow: run.workflow.clone(), action: a.action.clone(), result: a.result.clone() })
            .collect();
        self.seen += out.len();
        out
    }
}

fn count(actions: &[Applied], pred: impl Fn(&Action) -> bool) -> usize {
    actions.iter().filter(|a| pred(&a.action)).count()
}

fn kinds(actions: &[Applied]) -> Vec<String> {
    actions.iter().map(|a| format!("{} {}", a.workflow, a.action.summary())).collect()
}

// ---------------------------------------------------------------------------
// 1. Merge walkthrough reproduction

fn criterion_1() -> Outcome {
    let transcript = run_file(&corpus().join("merge_walkthrough.scenario"), RunOptions::default()).map_err(|e| e.to_string())?;
    let golden = std::fs::read_to_string(corpus().join("merge_walkthrough.golden")).unwrap();
    let expected: Vec<&str> = golden.lines().filter(|l| !l.trim().is_empty()).collect();
    let actual = transcript.action_lines();
    ensure!(actual == expected, "transcript differs from golden:\n{}", actual.join("\n"));

    let actions: Vec<&Action> = transcript.actions().map(|(_, _, a)| &a.action).collect();
    let Action::PostComment { body, .. } = actions[0] else { return Err("first action is not a comment".into()) };
    ensure!(body.contains("milestone"), "violation comment does not name the milestone: {body}");
    ensure!(body.matches("\n- ").count() == 1, "expected a single violation, got: {body}");
    let Action::MergePr { message, signed, .. } = actions[1] else { return Err("second action is not a merge".into()) };
    ensure!(*signed, "merge is not signed");
    ensure!(message.starts_with("Merge PR #1234: Fix anomaly in Ltac"), "unexpected merge message: {message}");
    Ok(format!("{} actions match the golden sequence", actual.len()))
}

// ---------------------------------------------------------------------------
// 2. Merge-candidate invariant over random DAGs

const FILES: [&str; 4] = ["kernel/term.ml", "plugins/ltac/tacinterp.ml", "doc/refman.rst", "theories/Init/Logic.v"];

#[derive(Debug, Clone)]
struct DagCase {
    /// Index 0 is the root; every other commit lists earlier parents.
    parents: Vec<Vec<usize>>,
    files: Vec<BTreeSet<usize>>,
    base: usize,
    head: usize,
    /// Files touched by the commit later pushed on top of `base`.
    bump: BTreeSet<usize>,
}

fn dag_case() -> impl Strategy<Value = DagCase> {
    (3usize..=9)
        .prop_flat_map(|n| {
            let nodes: Vec<_> = (1..n)
                .map(|i| {
                    (
                        proptest::collection::btree_set(0..i, 1..=2).prop_map(|s| s.into_iter().collect::<Vec<_>>()),
                        proptest::collection::btree_set(0..FILES.len(), 1..=2),
                    )
                })
                .collect();
            (nodes, 0..n, 0..n, proptest::collection::btree_set(0..FILES.len(), 1..=1))
        })
        .prop_filter("head and base differ", |(_, base, head, _)| base != head)
        .prop_map(|(nodes, base, head, bump)| {
            let mut parents = vec![Vec::new()];
            let mut files = vec![(0..FILES.len()).collect::<BTreeSet<_>>()];
            for (p, f) in nodes {
                parents.push(p);
                files.push(f);
            }
            DagCase { parents, files, base, head, bump }
        })
}

impl DagCase {
    fn ancestors(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([i]);
        let mut stack = vec![i];
        while let Some(c) = stack.pop() {
            for &p in &self.parents[c] {
                if out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Files changed on both sides since their lowest common ancestors.
    fn conflicts(&self, a: usize, b: usize) -> BTreeSet<usize> {
        let common: BTreeSet<usize> = self.ancestors(a).intersection(&self.ancestors(b)).copied().collect();
        let lowest: Vec<usize> =
            common.iter().copied().filter(|&c| !common.iter().any(|&d| d != c && self.ancestors(d).contains(&c))).collect();
        let excluded: BTreeSet<usize> = lowest.iter().flat_map(|&l| self.ancestors(l)).collect();
        let touched = |tip: usize| -> BTreeSet<usize> {
            self.ancestors(tip).difference(&excluded).flat_map(|&i| self.files[i].iter().copied()).collect()
        };
        touched(a).intersection(&touched(b)).copied().collect()
    }

    /// The same case with the base-update commit appended; returns its index.
    fn with_bump(&self) -> (DagCase, usize) {
        let mut next = self.clone();
        next.parents.push(vec![self.base]);
        next.files.push(self.bump.clone());
        let idx = next.parents.len() - 1;
        (next, idx)
    }
}

const T0: &str = "2021-03-01T12:00:00Z";

fn dag_state(case: &DagCase) -> (ForgeState, Vec<Sha>) {
    let mut state = ForgeState::new(T0.parse().unwrap(), "coqbot");
    let mut shas: Vec<Sha> = Vec::new();
    for i in 0..case.parents.len() {
        let parents: Vec<Sha> = case.parents[i].iter().map(|&p| shas[p].clone()).collect();
        let files: Vec<&str> = case.files[i].iter().map(|&f| FILES[f]).collect();
        shas.push(state.commit(None, &parents, &files, &format!("commit {i}")).unwrap());
    }
    state.add_repo(gh());
    state.add_repo(gl());
    state.set_branch(&gh(), "master", shas[case.base].clone()).unwrap();
    state.outbox.clear();
    (state, shas)
}

/// Opens PR #1 from `head` against `base`, then pushes a new commit on top of
/// `base`. Returns each phase's actions with the mirror branch head after it,
/// and the commit shas.
fn run_dag_case(case: &DagCase, duplicate_deliveries: bool) -> (Harness, Vec<Phase>, Vec<Sha>) {
    let (state, mut shas) = dag_state(case);
    let mut h = Harness::new(Config::single("coq/coq", Some("coq/coq")), state).with_duplicate_deliveries(duplicate_deliveries);
    let mut window = Window::new(&h);
    let head = shas[case.head].clone();
    h.act(|s| {
        s.open_pr(
            &gh(),
            NewPr {
                number: 1,
                title: "Random change".into(),
                author: "bob".into(),
                head_branch: "feature".into(),
                head: head.clone(),
                base_branch: "master".into(),
            },
        )
    })
    .unwrap();
    let phase1 = Phase { actions: window.take(&h), mirrored: h.forge().branch_head(&gl(), "pr-1").unwrap() };
    let base = shas[case.base].clone();
    let bump: Vec<&str> = case.bump.iter().map(|&f| FILES[f]).collect();
    let b2 = h
        .act(|s| {
            let b2 = s.commit(None, std::slice::from_ref(&base), &bump, "base update")?;
            s.push(&gh(), "master", b2.clone(), "pierre")?;
            Ok(b2)
        })
        .unwrap();
    shas.push(b2);
    let phase2 = Phase { actions: window.take(&h), mirrored: h.forge().branch_head(&gl(), "pr-1").unwrap() };
    (h, vec![phase1, phase2], shas)
}

struct Phase {
    actions: Vec<Applied>,
    mirrored: Option<Sha>,
}

fn check_phase(
    h: &Harness,
    phase: &Phase,
    head: &Sha,
    base: &Sha,
    conflicted: bool,
    was_conflicted: bool,
) -> Result<(), String> {
    let actions = &phase.actions;
    let pushes: Vec<&Applied> =
        actions.iter().filter(|a| matches!(&a.action, Action::PushBranch { repo, .. } if *repo == gl())).collect();
    let add_rebase = count(actions, |a| matches!(a, Action::AddLabel { label, .. } if label == "needs: rebase"));
    if conflicted {
        ensure!(pushes.is_empty(), "conflicted PR was pushed: {:?}", kinds(actions));
        let expected = if was_conflicted { 0 } else { 1 };
        ensure!(add_rebase == expected, "{add_rebase} needs-rebase labels, expected {expected}: {:?}", kinds(actions));
        return Ok(());
    }
    ensure!(pushes.len() == 1, "{} mirror pushes for a clean PR: {:?}", pushes.len(), kinds(actions));
    ensure!(add_rebase == 0, "clean PR was labeled");
    let Action::PushBranch { source, .. } = &pushes[0].action else { unreachable!() };
    ensure!(pushes[0].result.status == ActionStatus::Applied, "push result {:?}", pushes[0].result);
    let state = h.forge().state();
    let commit = state.commits.get(source).ok_or("pushed commit is unknown to the forge")?;
    let parents: BTreeSet<&Sha> = commit.parents.iter().collect();
    ensure!(commit.parents.len() == 2, "candidate has {} parents", commit.parents.len());
    ensure!(parents == BTreeSet::from([head, base]), "candidate parents {:?} are not {{head, base}}", commit.parents);
    ensure!(phase.mirrored.as_ref() == Some(source), "mirror branch is at {:?}, candidate {source}", phase.mirrored);
    Ok(())
}

fn dag_runner(cases: u32) -> TestRunner {
    let config = RunnerConfig { cases, failure_persistence: None, ..RunnerConfig::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn criterion_2() -> Outcome {
    let conflicted_phases = Cell::new(0);
    let clean_phases = Cell::new(0);
    let mut runner = dag_runner(200);
    let result = runner.run(&dag_case(), |case| {
        let (h, phases, shas) = run_dag_case(&case, false);
        let (bumped, b2) = case.with_bump();
        let c1 = !case.conflicts(case.head, case.base).is_empty();
        let c2 = !bumped.conflicts(case.head, b2).is_empty();
        let head = &shas[case.head];
        check_phase(&h, &phases[0], head, &shas[case.base], c1, false)
            .map_err(|e| proptest::test_runner::TestCaseError::fail(format!("open: {e}")))?;
        check_phase(&h, &phases[1], head, &shas[b2], c2, c1)
            .map_err(|e| proptest::test_runner::TestCaseError::fail(format!("base push: {e}")))?;
        for c in [c1, c2] {
            if c {
                conflicted_phases.set(conflicted_phases.get() + 1);
            } else {
                clean_phases.set(clean_phases.get() + 1);
            }
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    ensure!(conflicted_phases.get() > 0 && clean_phases.get() > 0, "generator did not cover both outcomes");
    Ok(format!(
        "200 DAG scenarios, {} clean and {} conflicted sync phases",
        clean_phases.get(),
        conflicted_phases.get()
    ))
}

// ---------------------------------------------------------------------------
// 3. Stale policy timing

/// Pushes a conflicting base and opens PR 104, so the label lands at t0.
fn stale_setup() -> (Harness, Window) {
    let mut h = coq_harness();
    let clash = h.forge().state().resolve("clash").unwrap();
    let feat = h.forge().state().resolve("feat").unwrap();
    h.act(|s| s.push(&gh(), "master", clash, "pierre")).unwrap();
    let mut window = Window::new(&h);
    h.act(|s| {
        s.open_pr(
            &gh(),
            NewPr {
                number: 104,
                title: "Speed up term comparison".into(),
                author: "dave".into(),
                head_branch: "pr-104".into(),
                head: feat,
                base_branch: "master".into(),
            },
        )
    })
    .unwrap();
    let opened = window.take(&h);
    assert_eq!(count(&opened, |a| matches!(a, Action::AddLabel { label, .. } if label == "needs: rebase")), 1);
    (h, window)
}

fn is_close(a: &Action) -> bool {
    matches!(a, Action::ClosePr { number: 104, .. })
}

fn is_comment(a: &Action) -> bool {
    matches!(a, Action::PostComment { number: 104, .. })
}

fn criterion_3() -> Outcome {
    // The literal schedule: jumps to t0+29d, 30d, 59d and 60d.
    let (mut h, mut window) = stale_setup();
    let mut observed = Vec::new();
    for (step, label) in [(29, "29d"), (1, "30d"), (29, "59d"), (1, "60d")] {
        h.advance(Duration::days(step)).map_err(|e| e.to_string())?;
        observed.push((label, window.take(&h)));
    }
    ensure!(observed[0].1.is_empty(), "t0+29d: {:?}", kinds(&observed[0].1));
    ensure!(
        count(&observed[1].1, is_comment) == 1 && count(&observed[1].1, is_close) == 0,
        "t0+30d: {:?}",
        kinds(&observed[1].1)
    );
    ensure!(observed[2].1.is_empty(), "t0+59d: {:?}", kinds(&observed[2].1));
    ensure!(count(&observed[3].1, is_close) == 1, "t0+60d: {:?}", kinds(&observed[3].1));

    // Daily ticks: exactly one warning on day 30, one closure on day 60, silence otherwise.
    let (mut h, mut window) = stale_setup();
    for day in 1..=120 {
        h.advance(Duration::days(1)).map_err(|e| e.to_string())?;
        let actions = window.take(&h);
        let (comments, closes) = (count(&actions, is_comment), count(&actions, is_close));
        match day {
            30 => ensure!(comments == 1 && closes == 0, "day 30: {:?}", kinds(&actions)),
            60 => ensure!(closes == 1, "day 60: {:?}", kinds(&actions)),
            _ => ensure!(actions.is_empty(), "day {day}: {:?}", kinds(&actions)),
        }
    }
    ensure!(h.forge().get_pr_snapshot(&gh(), 104).unwrap().state == PrState::Closed, "PR not closed");

    // Conflict resolved on day 45: never closed.
    let (mut h, mut window) = stale_setup();
    let mut total_closures = 0;
    for day in 1..=150 {
        if day == 45 {
            let clash = h.forge().state().resolve("clash").unwrap();
            h.act(|s| {
                let rebased = s.commit(None, &[clash], &["kernel/term.ml"], "Speed up term comparison (rebased)")?;
                s.push_pr(&gh(), 104, rebased)
            })
            .map_err(|e| e.to_string())?;
            let actions = window.take(&h);
            ensure!(
                count(&actions, |a| matches!(a, Action::RemoveLabel { label, .. } if label == "needs: rebase")) == 1,
                "rebase did not clear the label: {:?}",
                kinds(&actions)
            );
        }
        h.advance(Duration::days(1)).map_err(|e| e.to_string())?;
        total_closures += count(&window.take(&h), is_close);
    }
    ensure!(total_closures == 0, "resolved PR was closed {total_closures} time(s)");
    ensure!(h.forge().get_pr_snapshot(&gh(), 104).unwrap().state == PrState::Open, "resolved PR is not open");
    Ok("warning exactly at 30d, closure exactly at 60d, none after resolution at 45d".into())
}

// ---------------------------------------------------------------------------
// 4. Complete feedback

fn compliant_snapshot() -> PrSnapshot {
    let prefixes = LabelPrefixes::default();
    let sha = |c: char| Sha::parse(&c.to_string().repeat(40)).unwrap();
    PrSnapshot {
        number: 42,
        title: "Fix anomaly".into(),
        author: "bob".into(),
        head: GitRef { repo: gh(), branch: "fix".into(), sha: sha('a') },
        base: GitRef { repo: gh(), branch: "master".into(), sha: sha('b') },
        labels: [prefixes.classify("kind: fix").unwrap()].into(),
        milestone: Some(Milestone { number: 1, title: "8.13".into(), description: String::new() }),
        assignees: ["alice".to_owned()].into(),
        approved_reviews: 1,
        changes_requested_reviews: 0,
        ci_verdict: CiVerdict::Success,
        state: PrState::Open,
        mergeable: Mergeability::Clean,
        merge_commit: None,
    }
}

/// Each dimension sets one criterion off on an otherwise compliant input.
type Dimension = (ViolationCode, fn(&mut PrSnapshot, &mut String, &mut bool));

fn all_dimensions() -> Vec<Dimension> {
    vec![
        (ViolationCode::NotMaintainer, |_, _, member| *member = false),
        (ViolationCode::HasNeedsLabel, |s, _, _| {
            s.labels.insert(LabelPrefixes::default().classify("needs: rebase").unwrap());
        }),
        (ViolationCode::NoKindLabel, |s, _, _| s.labels.retain(|l| l.name != "kind: fix")),
        (ViolationCode::NoMilestone, |s, _, _| s.milestone = None),
        (ViolationCode::NoAssignee, |s, _, _| s.assignees.clear()),
        (ViolationCode::InsufficientReviews, |s, _, _| s.approved_reviews = 0),
        (ViolationCode::ChangesRequested, |s, _, _| s.changes_requested_reviews = 1),
        (ViolationCode::WrongBase, |s, _, _| s.base.branch = "v8.13".into()),
        (ViolationCode::CiNotGreen, |s, _, _| s.ci_verdict = CiVerdict::Failure),
        (ViolationCode::Conflict, |s, _, _| s.mergeable = Mergeability::Conflicting),
        (ViolationCode::SelfMerge, |s, commenter, _| *commenter = s.author.clone()),
    ]
}

fn brute_force(dimensions: &[Dimension]) -> Result<usize, String> {
    let policy = MergePolicy { allowed_base_branches: vec!["master".into()], forbid_self_merge: true, ..Default::default() };
    for mask in 0u32..(1 << dimensions.len()) {
        let mut snapshot = compliant_snapshot();
        let mut commenter = "alice".to_owned();
        let mut member = true;
        let mut expected = Vec::new();
        for (i, (code, set)) in dimensions.iter().enumerate() {
            if mask & (1 << i) != 0 {
                set(&mut snapshot, &mut commenter, &mut member);
                expected.push(*code);
            }
        }
        expected.sort();
        let violations = evaluate_policy(&snapshot, &commenter, member, &policy);
        let codes: Vec<ViolationCode> = violations.iter().map(|v| v.code).collect();
        ensure!(codes == expected, "mask {mask:#b}: reported {codes:?}, expected {expected:?}");
        let report = violation_report(&commenter, &violations);
        ensure!(
            violations.iter().all(|v| report.contains(&v.detail)) && report.matches("\n- ").count() == violations.len(),
            "mask {mask:#b}: report does not list every violation:\n{report}"
        );
    }
    Ok(1 << dimensions.len())
}

fn criterion_4() -> Outcome {
    let all = all_dimensions();
    let six: Vec<Dimension> = all
        .iter()
        .filter(|(code, _)| {
            matches!(
                code,
                ViolationCode::NotMaintainer
                    | ViolationCode::HasNeedsLabel
                    | ViolationCode::NoMilestone
                    | ViolationCode::NoAssignee
                    | ViolationCode::InsufficientReviews
                    | ViolationCode::WrongBase
            )
        })
        .copied()
        .collect();
    let n6 = brute_force(&six)?;
    let n_all = brute_force(&all)?;
    Ok(format!("{n6} combinations of 6 dimensions exact (also {n_all} over all {} codes)", all.len()))
}

// ---------------------------------------------------------------------------
// 5. Redelivery

fn criterion_5() -> Outcome {
    let mut scripts: Vec<PathBuf> = std::fs::read_dir(corpus())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "scenario"))
        .collect();
    scripts.sort();
    for path in &scripts {
        let once = run_file(path, RunOptions::default()).map_err(|e| e.to_string())?;
        let twice = run_file(path, RunOptions { duplicate_deliveries: true }).map_err(|e| e.to_string())?;
        ensure!(
            once.entries.is_empty() || once.final_state_digest.is_some(),
            "{}: no final state digest",
            path.display()
        );
        ensure!(once == twice, "{}: duplicated deliveries changed the transcript", path.display());
    }
    let dropped = Cell::new(0u64);
    let mut runner = dag_runner(50);
    runner
        .run(&dag_case(), |case| {
            let (single, _, _) = run_dag_case(&case, false);
            let (double, _, _) = run_dag_case(&case, true);
            proptest::prop_assert_eq!(single.finish(), double.finish());
            proptest::prop_assert!(double.duplicates_dropped() > 0);
            dropped.set(dropped.get() + double.duplicates_dropped());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{} scenarios and 50 random DAG runs identical under double delivery ({} duplicates dropped)",
        scripts.len(),
        dropped.get()
    ))
}

// ---------------------------------------------------------------------------
// 6. Status mapping

fn job(name: &str, status: JobStatus, log: &str, artifacts: Vec<Link>) -> FinishedJob {
    FinishedJob { job_name: name.into(), status, log: log.into(), artifacts, script: None }
}

fn criterion_6() -> Outcome {
    let mut h = coq_harness();
    let feat = h.forge().state().resolve("feat").unwrap();
    let root = h.forge().state().resolve("root").unwrap();
    let mut window = Window::new(&h);
    h.act(|s| {
        s.open_pr(
            &gh(),
            NewPr {
                number: 101,
                title: "Speed up term comparison".into(),
                author: "bob".into(),
                head_branch: "pr-101".into(),
                head: feat.clone(),
                base_branch: "master".into(),
            },
        )
    })
    .unwrap();
    window.take(&h);
    let cand1 = h.forge().branch_head(&gl(), "pr-101").unwrap().ok_or("no first candidate")?;

    h.act(|s| {
        let m2 = s.commit(None, std::slice::from_ref(&root), &["plugins/ltac/tacinterp.ml"], "Merge PR #99: Refactor Ltac")?;
        s.push(&gh(), "master", m2, "pierre")
    })
    .unwrap();
    window.take(&h);
    let cand2 = h.forge().branch_head(&gl(), "pr-101").unwrap().ok_or("no second candidate")?;
    ensure!(cand1 != cand2, "base push did not supersede the candidate");

    let check_runs = |actions: &[Applied]| -> Vec<Action> {
        actions.iter().filter(|a| matches!(a.action, Action::CreateCheckRun { .. })).map(|a| a.action.clone()).collect()
    };

    h.act(|s| s.finish_job(&gl(), &cand1, "pr-101", job("test-suite", JobStatus::Failure, "Error: stale", vec![])))
        .unwrap();
    h.act(|s| s.finish_pipeline(&gl(), &cand1, "pr-101", PipelineStatus::Failure)).unwrap();
    let stale = window.take(&h);
    ensure!(stale.is_empty(), "superseded candidate produced actions: {:?}", kinds(&stale));

    let log = "Compiling kernel\nFile \"kernel/term.ml\", line 3\nError: Unbound value compare\nmake: *** [Makefile:10] Error 1";
    h.act(|s| s.finish_job(&gl(), &cand2, "pr-101", job("test-suite", JobStatus::Failure, log, vec![]))).unwrap();
    let runs = check_runs(&window.take(&h));
    ensure!(runs.len() == 1, "{} check runs for the current candidate", runs.len());
    let Action::CreateCheckRun { repo, head_sha, conclusion, summary, .. } = &runs[0] else { unreachable!() };
    ensure!(*repo == gh() && *head_sha == feat, "check run on {repo} {head_sha}, expected the origin head {feat}");
    ensure!(*conclusion == CheckConclusion::Failure, "conclusion {conclusion:?}");
    ensure!(summary.contains("Error: Unbound value compare"), "failure excerpt missing:\n{summary}");

    let artifact = Link { name: "refman".into(), url: "https://gitlab.example/coq/coq/-/jobs/artifacts/refman/index.html".into() };
    h.act(|s| s.finish_job(&gl(), &cand2, "pr-101", job("doc:refman", JobStatus::Success, "built", vec![artifact.clone()])))
        .unwrap();
    let runs = check_runs(&window.take(&h));
    ensure!(runs.len() == 1, "{} check runs for the docs job", runs.len());
    let Action::CreateCheckRun { head_sha, links, conclusion, .. } = &runs[0] else { unreachable!() };
    ensure!(*head_sha == feat && *conclusion == CheckConclusion::Success, "docs check run on {head_sha}");
    ensure!(links.iter().any(|l| l.url == artifact.url), "artifact link missing: {links:?}");

    h.act(|s| s.finish_pipeline(&gl(), &cand2, "pr-101", PipelineStatus::Success)).unwrap();
    let statuses = window.take(&h);
    ensure!(
        count(&statuses, |a| matches!(a, Action::SetCommitStatus { sha, .. } if *sha == feat)) == 1,
        "pipeline result not mapped to the origin head: {:?}",
        kinds(&statuses)
    );
    Ok("stale candidate ignored; one check run on the origin head with excerpt and artifact links".into())
}

// ---------------------------------------------------------------------------
// 7. Minimizer round trip

fn minimizer_counts(actions: &[Applied], number: u64) -> (usize, usize) {
    let dispatches = count(actions, |a| matches!(a, Action::DispatchJob { .. }));
    let results = actions
        .iter()
        .filter(|a| a.workflow == "minimizer_gateway")
        .filter(|a| matches!(&a.action, Action::PostComment { number: n, body, .. } if *n == number && (body.contains("reduced test case") || body.contains("minimization failed"))))
        .count();
    (dispatches, results)
}

fn criterion_7() -> Outcome {
    let mut h = coq_harness();
    let mut window = Window::new(&h);

    h.act(|s| s.open_issue(&gh(), 200, "erin", "Anomaly in Ltac", "Anomaly in Ltac.\n\n@coqbot minimize\n```\ncoqc bug.v\n```"))
        .unwrap();
    let manual = window.take(&h);
    ensure!(minimizer_counts(&manual, 200) == (1, 1), "manual path: {:?}", kinds(&manual));

    let feat = h.forge().state().resolve("feat").unwrap();
    let root = h.forge().state().resolve("root").unwrap();
    h.act(|s| {
        s.open_pr(
            &gh(),
            NewPr {
                number: 106,
                title: "Speed up term comparison".into(),
                author: "bob".into(),
                head_branch: "pr-106".into(),
                head: feat.clone(),
                base_branch: "master".into(),
            },
        )
    })
    .unwrap();
    window.take(&h);
    let cand = h.forge().branch_head(&gl(), "pr-106").unwrap().ok_or("no candidate")?;
    let script = "opam install coq-mathcomp-ssreflect\nmake -C mathcomp";
    let failing = |script: &str| FinishedJob {
        job_name: "ci-mathcomp".into(),
        status: JobStatus::Failure,
        log: "Error: mathcomp broke".into(),
        artifacts: Vec::new(),
        script: Some(script.into()),
    };
    let is_proposal = |a: &Action| {
        matches!(a, Action::PostComment { number: 106, body, .. }
            if body.contains("@coqbot minimize") && script.lines().all(|l| body.contains(l)))
    };

    h.act(|s| s.finish_job(&gl(), &cand, "pr-106", failing(script))).unwrap();
    let proposed = window.take(&h);
    ensure!(count(&proposed, is_proposal) == 1, "first failure: {:?}", kinds(&proposed));

    h.act(|s| s.finish_job(&gl(), &cand, "pr-106", failing(script))).unwrap();
    let retried = window.take(&h);
    ensure!(count(&retried, is_proposal) == 0, "same (PR, job, sha) proposed twice: {:?}", kinds(&retried));

    h.act(|s| s.comment(&gh(), 106, "bob", &proposal_command("coqbot", script))).unwrap();
    let accepted = window.take(&h);
    ensure!(minimizer_counts(&accepted, 106) == (1, 1), "CI-proposed path: {:?}", kinds(&accepted));

    h.act(|s| {
        let m2 = s.commit(None, std::slice::from_ref(&root), &["plugins/ltac/tacinterp.ml"], "Merge PR #99: Refactor Ltac")?;
        s.push(&gh(), "master", m2, "pierre")
    })
    .unwrap();
    window.take(&h);
    let cand2 = h.forge().branch_head(&gl(), "pr-106").unwrap().ok_or("no second candidate")?;
    h.act(|s| s.finish_job(&gl(), &cand2, "pr-106", failing(script))).unwrap();
    let new_sha = window.take(&h);
    ensure!(count(&new_sha, is_proposal) == 1, "new candidate sha not proposed: {:?}", kinds(&new_sha));
    Ok("manual and CI-proposed paths: 1 job + 1 result each; proposals deduplicated per (PR, job, sha)".into())
}

// ---------------------------------------------------------------------------
// 8. Contract parity and HMAC vectors

#[derive(Deserialize)]
struct HmacVector {
    name: String,
    key_hex: String,
    body_hex: String,
    hmac_sha256: String,
}

fn criterion_8() -> Outcome {
    let seed = Seed::parse(&std::fs::read_to_string(manifest().join("tests/fixtures/contract_seed.json")).unwrap()).unwrap();
    let state = seed.build().map_err(|e| e.to_string())?;
    let push_sha = state.resolve("feat").unwrap();
    let forge = MockForge::new(state);
    let fixture = ContractFixture {
        repo: gh(),
        labeled_pr: 7,
        milestone_pr: 8,
        absent_pr: 999,
        org: "coq".into(),
        team: "maintainers".into(),
        member: "alice".into(),
        non_member: "mallory".into(),
        unknown_team: "ghosts".into(),
        unlabeled_pr: 9,
        new_label: "needs: squashing".into(),
        conflicted_pr: 10,
        mirror: gl(),
        push_branch: "contract-push".into(),
        push_sha,
    };
    let checks = run_contract(&forge, &fixture);
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    ensure!(failed.is_empty(), "contract failures: {failed:?}");

    let vectors: Vec<HmacVector> =
        serde_json::from_str(&std::fs::read_to_string(manifest().join("tests/fixtures/hmac_vectors.json")).unwrap())
            .unwrap();
    ensure!(vectors.len() >= 10, "only {} HMAC vectors", vectors.len());
    for v in &vectors {
        let key = hex::decode(&v.key_hex).unwrap();
        let body = hex::decode(&v.body_hex).unwrap();
        let header = format!("sha256={}", v.hmac_sha256);
        ensure!(sign(&key, &body) == header, "{}: signature mismatch", v.name);
        ensure!(verify_signature(&key, &body, &header), "{}: verification failed", v.name);
        let mut tampered = body.clone();
        tampered.push(b'!');
        ensure!(!verify_signature(&key, &tampered, &header), "{}: tampered body verified", v.name);
    }
    Ok(format!("{} contract checks on the mock; {} HMAC vectors round-trip", checks.len(), vectors.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "merge walkthrough reproduction", criterion_1),
        (2, "merge-candidate invariant", criterion_2),
        (3, "stale policy timing", criterion_3),
        (4, "complete-feedback oracle", criterion_4),
        (5, "idempotent redelivery", criterion_5),
        (6, "status-mapping correctness", criterion_6),
        (7, "minimizer round trip", criterion_7),
        (8, "contract parity and HMAC vectors", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(message)
        });
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("criterion {n} ({name}): PASS - {detail}");
            }
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
