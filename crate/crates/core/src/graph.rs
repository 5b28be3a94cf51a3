//! A toy commit graph with file-level three-way merges.
//!
//! Each commit records the set of files it touches. Two heads merge cleanly
//! iff the files touched on each side since their merge base(s) are disjoint.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Commit, Sha};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown commit {0}")]
    UnknownCommit(Sha),
    #[error("commit {0} has more than two parents")]
    TooManyParents(Sha),
    #[error("commit {sha} does not hash to its content")]
    BadSha { sha: Sha },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeConflict {
    pub files: BTreeSet<String>,
}

/// Stable content hash of a toy commit: sha256 over a canonical encoding,
/// truncated to 20 bytes so it has the shape of a git sha.
pub fn toy_sha(parents: &[Sha], files: &BTreeSet<String>, message: &str) -> Sha {
    let mut hasher = Sha256::new();
    for p in parents {
        hasher.update(b"parent ");
        hasher.update(p.as_str().as_bytes());
        hasher.update(b"\n");
    }
    for f in files {
        hasher.update(b"file ");
        hasher.update((f.len() as u64).to_be_bytes());
        hasher.update(f.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(b"message ");
    hasher.update(message.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[..20]);
    Sha::from_bytes(&out)
}

impl Commit {
    pub fn new(parents: Vec<Sha>, files: BTreeSet<String>, message: impl Into<String>) -> Commit {
        let message = message.into();
        let sha = toy_sha(&parents, &files, &message);
        Commit { sha, parents, files, message }
    }

    pub fn is_merge(&self) -> bool {
        self.parents.len() == 2
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitGraph {
    commits: BTreeMap<Sha, Commit>,
}

const PARENT1: u8 = 1;
const PARENT2: u8 = 2;
const STALE: u8 = 4;

impl CommitGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a commit whose parents are already present. Parents-first
    /// insertion keeps the graph acyclic.
    pub fn insert(&mut self, commit: Commit) -> Result<(), GraphError> {
        if commit.parents.len() > 2 {
            return Err(GraphError::TooManyParents(commit.sha));
        }
        if toy_sha(&commit.parents, &commit.files, &commit.message) != commit.sha {
            return Err(GraphError::BadSha { sha: commit.sha });
        }
        if let Some(missing) = commit.parents.iter().find(|p| !self.commits.contains_key(*p)) {
            return Err(GraphError::UnknownCommit(missing.clone()));
        }
        self.commits.entry(commit.sha.clone()).or_insert(commit);
        Ok(())
    }

    /// Inserts a commit whose id comes from a real forge rather than [`toy_sha`].
    pub fn insert_trusted(&mut self, commit: Commit) -> Result<(), GraphError> {
        if commit.parents.len() > 2 {
            return Err(GraphError::TooManyParents(commit.sha));
        }
        if let Some(missing) = commit.parents.iter().find(|p| !self.commits.contains_key(*p)) {
            return Err(GraphError::UnknownCommit(missing.clone()));
        }
        self.commits.entry(commit.sha.clone()).or_insert(commit);
        Ok(())
    }

    /// Inserts a batch in any order, as long as every parent is in the graph or the batch.
    pub fn insert_all(&mut self, commits: impl IntoIterator<Item = Commit>) -> Result<(), GraphError> {
        let mut pending: Vec<Commit> = commits.into_iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for c in pending {
                if c.parents.iter().all(|p| self.commits.contains_key(p)) {
                    self.insert(c)?;
                } else {
                    rest.push(c);
                }
            }
            if rest.len() == before {
                let missing = rest[0]
                    .parents
                    .iter()
                    .find(|p| !self.commits.contains_key(*p))
                    .cloned()
                    .expect("a parent is missing");
                return Err(GraphError::UnknownCommit(missing));
            }
            pending = rest;
        }
        Ok(())
    }

    pub fn get(&self, sha: &Sha) -> Option<&Commit> {
        self.commits.get(sha)
    }

    pub fn contains(&self, sha: &Sha) -> bool {
        self.commits.contains_key(sha)
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    pub fn commits(&self) -> impl Iterator<Item = &Commit> {
        self.commits.values()
    }

    fn require(&self, sha: &Sha) -> Result<&Commit, GraphError> {
        self.commits.get(sha).ok_or_else(|| GraphError::UnknownCommit(sha.clone()))
    }

    /// All commits reachable from `sha`, inclusive.
    pub fn ancestors(&self, sha: &Sha) -> Result<BTreeSet<Sha>, GraphError> {
        self.require(sha)?;
        let mut seen = BTreeSet::new();
        let mut stack = vec![sha.clone()];
        while let Some(s) = stack.pop() {
            if seen.insert(s.clone()) {
                stack.extend(self.commits[&s].parents.iter().cloned());
            }
        }
        Ok(seen)
    }

    pub fn is_ancestor(&self, ancestor: &Sha, of: &Sha) -> Result<bool, GraphError> {
        self.require(ancestor)?;
        Ok(self.ancestors(of)?.contains(ancestor))
    }

    fn generations(&self) -> BTreeMap<&Sha, u32> {
        let mut gens: BTreeMap<&Sha, u32> = BTreeMap::new();
        for sha in self.commits.keys() {
            let mut stack = vec![sha];
            while let Some(&top) = stack.last() {
                if gens.contains_key(top) {
                    stack.pop();
                    continue;
                }
                let parents = &self.commits[top].parents;
                let pending: Vec<&Sha> = parents.iter().filter(|p| !gens.contains_key(*p)).collect();
                if pending.is_empty() {
                    let g = parents.iter().map(|p| gens[p]).max().unwrap_or(0) + 1;
                    gens.insert(top, g);
                    stack.pop();
                } else {
                    stack.extend(pending);
                }
            }
        }
        gens
    }

    /// Lowest common ancestors of `a` and `b`, found by painting down from both
    /// heads in generation order.
    pub fn merge_bases(&self, a: &Sha, b: &Sha) -> Result<Vec<Sha>, GraphError> {
        self.require(a)?;
        self.require(b)?;
        if a == b {
            return Ok(vec![a.clone()]);
        }
        let gens = self.generations();
        let mut flags: BTreeMap<&Sha, u8> = BTreeMap::new();
        let mut queue: BinaryHeap<(u32, Reverse<&Sha>)> = BinaryHeap::new();
        let (a, b) = (self.commits.get_key_value(a).unwrap().0, self.commits.get_key_value(b).unwrap().0);
        *flags.entry(a).or_default() |= PARENT1;
        *flags.entry(b).or_default() |= PARENT2;
        queue.push((gens[a], Reverse(a)));
        queue.push((gens[b], Reverse(b)));
        let mut result = Vec::new();
        while let Some((_, Reverse(sha))) = queue.pop() {
            let mut f = flags[sha] & (PARENT1 | PARENT2 | STALE);
            if f & (PARENT1 | PARENT2) == PARENT1 | PARENT2 && f & STALE == 0 {
                result.push(sha.clone());
                f |= STALE;
                flags.insert(sha, flags[sha] | STALE);
            }
            for p in &self.commits[sha].parents {
                let pf = flags.entry(p).or_default();
                if *pf & f == f {
                    continue;
                }
                *pf |= f;
                queue.push((gens[p], Reverse(p)));
            }
        }
        // A base reached before its descendant base was marked stale is redundant.
        let mut bases = Vec::new();
        for r in &result {
            let redundant = result.iter().any(|o| o != r && self.ancestors(o).map(|s| s.contains(r)).unwrap_or(false));
            if !redundant {
                bases.push(r.clone());
            }
        }
        bases.sort();
        bases.dedup();
        Ok(bases)
    }

    /// Files touched by commits reachable from `tip` but not from any of `bases`.
    pub fn touched_since(&self, bases: &[Sha], tip: &Sha) -> Result<BTreeSet<String>, GraphError> {
        let mut excluded = BTreeSet::new();
        for base in bases {
            excluded.extend(self.ancestors(base)?);
        }
        let mut files = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![tip.clone()];
        self.require(tip)?;
        while let Some(s) = stack.pop() {
            if excluded.contains(&s) || !seen.insert(s.clone()) {
                continue;
            }
            let c = &self.commits[&s];
            files.extend(c.files.iter().cloned());
            stack.extend(c.parents.iter().cloned());
        }
        Ok(files)
    }

    /// Files both sides touched since their merge bases.
    pub fn conflicts(&self, ours: &Sha, theirs: &Sha) -> Result<BTreeSet<String>, GraphError> {
        let bases = self.merge_bases(ours, theirs)?;
        let left = self.touched_since(&bases, ours)?;
        let right = self.touched_since(&bases, theirs)?;
        Ok(left.intersection(&right).cloned().collect())
    }

    /// Synthesizes (without inserting) a two-parent merge commit `[ours, theirs]`.
    /// Merge commits touch no files of their own.
    pub fn try_merge(
        &self,
        ours: &Sha,
        theirs: &Sha,
        message: &str,
    ) -> Result<Result<Commit, MergeConflict>, GraphError> {
        let files = self.conflicts(ours, theirs)?;
        if !files.is_empty() {
            return Ok(Err(MergeConflict { files }));
        }
        Ok(Ok(Commit::new(vec![ours.clone(), theirs.clone()], BTreeSet::new(), message)))
    }

    /// Commits reachable from `new` but not from `old`, parents before children,
    /// ties broken by sha.
    pub fn range(&self, old: Option<&Sha>, new: &Sha) -> Result<Vec<Commit>, GraphError> {
        let excluded = match old {
            Some(o) if self.contains(o) => self.ancestors(o)?,
            _ => BTreeSet::new(),
        };
        let included: BTreeSet<Sha> = self.ancestors(new)?.difference(&excluded).cloned().collect();
        let mut out = Vec::new();
        let mut placed = BTreeSet::new();
        while placed.len() < included.len() {
            for sha in &included {
                if placed.contains(sha) {
                    continue;
                }
                let c = &self.commits[sha];
                if c.parents.iter().all(|p| !included.contains(p) || placed.contains(p)) {
                    placed.insert(sha.clone());
                    out.push(c.clone());
                }
            }
        }
        Ok(out)
    }

    /// The closure of `heads` under the parent relation.
    pub fn subgraph(&self, heads: &[Sha]) -> Result<CommitGraph, GraphError> {
        let mut out = CommitGraph::new();
        for head in heads {
            for sha in self.ancestors(head)? {
                out.commits.insert(sha.clone(), self.commits[&sha].clone());
            }
        }
        Ok(out)
    }
}
