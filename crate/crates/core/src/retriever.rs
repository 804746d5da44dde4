//! Trajectory retrieval: decides Reach and cuts defect-relevant segments by
//! greedy forward matching against the test basis.
//!
//! The scan opens a segment at the first step matching the precondition
//! description and closes it at the first later step matching the evidence
//! description, then resumes after the closing step. A precondition match
//! with no later evidence still sets Reach.

use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::model::{AuditEntry, AuditStage, BasisRole, Segment, StateSide, Step, TestBasis, Trajectory};

/// Answer to "does this state match the key state description?".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub reason: String,
}

/// One state-match question.
#[derive(Debug, Clone, Copy)]
pub struct MatchQuery<'a> {
    pub step: &'a Step,
    pub side: StateSide,
    pub role: BasisRole,
    pub basis: &'a TestBasis,
    /// Directory that the step's image paths resolve against.
    pub root: &'a Path,
}

impl MatchQuery<'_> {
    pub fn description(&self) -> &str {
        self.basis.description(self.role)
    }
}

#[async_trait]
pub trait StateMatcher: Send + Sync {
    async fn match_state(&self, query: MatchQuery<'_>) -> Result<MatchResult, BackendError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Retrieval {
    pub reach: bool,
    pub segments: Vec<Segment>,
    pub audit: Vec<AuditEntry>,
    /// Matcher invocations issued for this trajectory.
    pub calls: usize,
}

struct ScanState<'a, M: ?Sized> {
    trajectory: &'a Trajectory,
    basis: &'a TestBasis,
    matcher: &'a M,
    memo: HashMap<(usize, BasisRole), bool>,
    audit: Vec<AuditEntry>,
    calls: usize,
}

impl<M: StateMatcher + ?Sized> ScanState<'_, M> {
    async fn ask(&mut self, ordinal: usize, side: StateSide, role: BasisRole) -> Result<bool, BackendError> {
        let step = self
            .trajectory
            .step(ordinal)
            .expect("scan stays within the trajectory");
        let query = MatchQuery {
            step,
            side,
            role,
            basis: self.basis,
            root: &self.trajectory.root,
        };
        self.calls += 1;
        let result = self.matcher.match_state(query).await?;
        let side_tag = match side {
            StateSide::Pre => "pre",
            StateSide::Post => "post",
        };
        self.audit.push(AuditEntry::new(
            AuditStage::Retrieval,
            Some(ordinal),
            format!("{role}/{side_tag}"),
            format!("matched={} reason={}", result.matched, result.reason),
        ));
        Ok(result.matched)
    }

    /// Step `ordinal` matches `role`. The post-state is the observation; the
    /// first step's pre-state is also checked for the precondition so a run
    /// that starts on the target page is not missed.
    async fn matches(&mut self, ordinal: usize, role: BasisRole) -> Result<bool, BackendError> {
        if let Some(&hit) = self.memo.get(&(ordinal, role)) {
            return Ok(hit);
        }
        let mut hit = false;
        if ordinal == 1 && role == BasisRole::Precondition {
            hit = self.ask(ordinal, StateSide::Pre, role).await?;
        }
        if !hit {
            hit = self.ask(ordinal, StateSide::Post, role).await?;
        }
        self.memo.insert((ordinal, role), hit);
        Ok(hit)
    }
}

/// Runs the greedy retrieval scan. A matcher failure aborts the whole
/// trajectory; it is never read as a non-match.
pub async fn retrieve_segments<M: StateMatcher + ?Sized>(
    trajectory: &Trajectory,
    basis: &TestBasis,
    matcher: &M,
) -> Result<Retrieval, BackendError> {
    let n = trajectory.len();
    let mut state = ScanState {
        trajectory,
        basis,
        matcher,
        memo: HashMap::new(),
        audit: Vec::new(),
        calls: 0,
    };
    let mut reach = false;
    let mut segments = Vec::new();

    let mut t = 1;
    while t <= n {
        if state.matches(t, BasisRole::Precondition).await? {
            reach = true;
            let s = t;
            let mut closed = false;
            let mut u = t + 1;
            while u <= n {
                if state.matches(u, BasisRole::Evidence).await? {
                    segments.push(Segment::new(s, u).expect("u > s >= 1"));
                    t = u;
                    closed = true;
                    break;
                }
                u += 1;
            }
            if !closed {
                // No evidence after s means none after any later start either:
                // the remaining scan can neither add a segment nor change reach.
                break;
            }
        }
        t += 1;
    }

    Ok(Retrieval {
        reach,
        segments,
        audit: state.audit,
        calls: state.calls,
    })
}

/// Per-step role flags used by the test oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub precondition: bool,
    pub evidence: bool,
}

/// Reference segmentation computed by exhaustive pair search: repeatedly pick
/// the lexicographically smallest `(s, u)` with `s >= from`, `s < u`,
/// a precondition flag at `s` and an evidence flag at `u`, then continue from
/// `u + 1`. Shares no code with [`retrieve_segments`]; only used as an oracle.
pub fn brute_force_segments(flags: &[StepFlags]) -> Vec<Segment> {
    let n = flags.len();
    let mut out = Vec::new();
    let mut from = 1;
    loop {
        let mut best: Option<(usize, usize)> = None;
        for s in from..=n {
            for u in s + 1..=n {
                if flags[s - 1].precondition && flags[u - 1].evidence {
                    best = match best {
                        Some(b) if b <= (s, u) => Some(b),
                        _ => Some((s, u)),
                    };
                }
            }
        }
        match best {
            Some((s, u)) => {
                out.push(Segment::new(s, u).expect("s < u"));
                from = u + 1;
            }
            None => return out,
        }
    }
}
