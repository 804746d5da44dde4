//! Defect verification inside retrieved segments and the end-to-end
//! per-trajectory judgment.
//!
//! Display verification looks at every state of every segment on its own.
//! Interaction verification walks each segment's transitions in order,
//! growing a history that is reset at every segment boundary. Findings are
//! then checked against the agent's report to decide Detect.

use std::collections::BTreeMap;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, InteractionQuery, JudgeBackend};
use crate::model::{
    AuditEntry, AuditStage, Claim, DefectClass, DefectReport, EvaluationCase, FaultMode, NavigationTask,
    Observation, Segment, StateSide, Step, TestBasis, Trajectory, Trigger, Verdict, VerdictViolation,
    VerifiedDefect,
};
use crate::retriever::retrieve_segments;

/// One `(pre-state, action, post-state)` triple, taken from a single step's
/// record. `ordinal` is that step's index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub ordinal: usize,
    #[serde(default)]
    pub thought: String,
    pub action: String,
    #[serde(default)]
    pub target: String,
    pub hit: bool,
    pub pre: Observation,
    pub post: Observation,
}

impl Transition {
    pub fn from_step(step: &Step, root: &Path) -> Self {
        Transition {
            ordinal: step.index,
            thought: step.thought.clone(),
            action: step.action.clone(),
            target: step.target.clone(),
            hit: step.hit,
            pre: step.observation(StateSide::Pre, root),
            post: step.observation(StateSide::Post, root),
        }
    }
}

/// Transitions seen so far in the current segment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionHistory {
    transitions: Vec<Transition>,
}

impl InteractionHistory {
    pub fn reset(&mut self) {
        self.transitions.clear();
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(self.transitions.last().is_none_or(|last| last.ordinal < t.ordinal));
        self.transitions.push(t);
    }

    pub fn as_slice(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn current(&self) -> Option<&Transition> {
        self.transitions.last()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    #[default]
    Deterministic,
    Model,
}

/// Deterministic report/finding agreement: step within `window` of the
/// finding and either the same claimed fault mode or, when the claim names
/// none, a keyword for the finding's mode in the description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyRules {
    pub window: usize,
    pub keywords: BTreeMap<FaultMode, Vec<String>>,
}

impl Default for ConsistencyRules {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        ConsistencyRules {
            window: 1,
            keywords: BTreeMap::from([
                (
                    FaultMode::ContentRendering,
                    words(&["garbled", "render", "placeholder", "broken image", "missing image", "blank", "truncated", "squares"]),
                ),
                (
                    FaultMode::ElementLayout,
                    words(&["layout", "misaligned", "overlap", "oversized", "larger than", "alignment"]),
                ),
                (
                    FaultMode::NavigationLogicError,
                    words(&["wrong page", "navigat", "returned to", "main interface", "home screen"]),
                ),
                (
                    FaultMode::OperationNoResponse,
                    words(&["no response", "did nothing", "not respond", "no feedback", "nothing happened", "unresponsive"]),
                ),
                (
                    FaultMode::UnexpectedTaskResult,
                    words(&["unexpected", "wrong result", "incorrect", "not applied", "still in english"]),
                ),
            ]),
        }
    }
}

impl ConsistencyRules {
    pub fn supports(&self, claim: &Claim, defect: &VerifiedDefect) -> bool {
        if claim.step.abs_diff(defect.step) > self.window {
            return false;
        }
        match claim.claimed_fault_mode {
            Some(mode) => mode == defect.fault_mode,
            None => {
                let description = claim.description.to_lowercase();
                self.keywords
                    .get(&defect.fault_mode)
                    .is_some_and(|ws| ws.iter().any(|w| description.contains(&w.to_lowercase())))
            }
        }
    }
}

/// Findings of one verifier stage with its audit lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageFindings {
    pub verified: Vec<VerifiedDefect>,
    pub audit: Vec<AuditEntry>,
    /// Judgments that reported a defect, before containment filtering.
    pub positive_judgments: usize,
}

/// Display verification: each state of each segment judged on its own.
/// Judgments fan out up to `concurrency`; findings come back sorted.
pub async fn verify_display<B: JudgeBackend + ?Sized>(
    segments: &[Segment],
    trajectory: &Trajectory,
    backend: &B,
    concurrency: usize,
) -> Result<StageFindings, BackendError> {
    let states: Vec<usize> = segments.iter().flat_map(Segment::states).collect();
    let judged: Vec<(usize, crate::backend::DisplayFinding)> = stream::iter(states)
        .map(|ordinal| async move {
            let step = trajectory.step(ordinal).expect("segment within trajectory");
            let obs = step.observation(StateSide::Post, &trajectory.root);
            backend.verify_display_state(&obs).await.map(|f| (ordinal, f))
        })
        .buffer_unordered(concurrency.max(1))
        .try_collect()
        .await?;

    let mut out = StageFindings::default();
    for (ordinal, finding) in judged {
        if finding.has_defect {
            out.positive_judgments += 1;
        }
        for (mode, d) in finding.typed().filter(|_| finding.has_defect) {
            out.verified.push(VerifiedDefect {
                step: ordinal,
                fault_mode: mode,
                evidence: d.evidence.clone(),
                reason: d.reason.clone(),
                locator: d.location_hint.clone(),
            });
        }
    }
    out.verified.sort();
    for v in &out.verified {
        out.audit.push(AuditEntry::new(
            AuditStage::Display,
            Some(v.step),
            "finding",
            format!("{} at {}", v.fault_mode, v.locator),
        ));
    }
    Ok(out)
}

/// Interaction verification. Trigger is set by any retained finding.
pub async fn verify_interaction<B: JudgeBackend + ?Sized>(
    segments: &[Segment],
    trajectory: &Trajectory,
    task: &NavigationTask,
    basis: &TestBasis,
    backend: &B,
) -> Result<StageFindings, BackendError> {
    let mut out = StageFindings::default();
    let mut history = InteractionHistory::default();
    for segment in segments {
        history.reset();
        for ordinal in segment.transition_steps() {
            let step = trajectory.step(ordinal).expect("segment within trajectory");
            history.push(Transition::from_step(step, &trajectory.root));
            let query = InteractionQuery {
                task: &task.instruction,
                basis: Some(basis),
                history: history.as_slice(),
                transition: history.current().expect("just pushed"),
            };
            let finding = backend.verify_interaction_transition(query).await?;
            let (true, Some(mode)) = (finding.has_defect, finding.defect.kind) else {
                continue;
            };
            out.positive_judgments += 1;
            let claimed = finding.defect.step;
            match usize::try_from(claimed).ok().filter(|s| segment.contains(*s)) {
                Some(at) => {
                    out.audit.push(AuditEntry::new(
                        AuditStage::Interaction,
                        Some(at),
                        "finding",
                        format!("{mode}: {}", finding.defect.reason),
                    ));
                    out.verified.push(VerifiedDefect {
                        step: at,
                        fault_mode: mode,
                        evidence: vec![finding.defect.effect.clone()],
                        reason: finding.defect.reason.clone(),
                        locator: finding.defect.effect.clone(),
                    });
                }
                None => {
                    tracing::debug!(claimed, ordinal, "discarding finding outside its segment");
                    out.audit.push(AuditEntry::new(
                        AuditStage::Interaction,
                        Some(ordinal),
                        "discarded",
                        format!(
                            "{mode} reported at step {claimed}, outside segment [{}, {}]",
                            segment.start(),
                            segment.end()
                        ),
                    ));
                }
            }
        }
    }
    out.verified.sort();
    Ok(out)
}

/// Single merged verifier over segment transitions, judging both classes.
pub async fn verify_unified<B: JudgeBackend + ?Sized>(
    segments: &[Segment],
    trajectory: &Trajectory,
    task: &NavigationTask,
    basis: &TestBasis,
    backend: &B,
) -> Result<StageFindings, BackendError> {
    let mut out = StageFindings::default();
    let mut history = InteractionHistory::default();
    for segment in segments {
        history.reset();
        for ordinal in segment.transition_steps() {
            let step = trajectory.step(ordinal).expect("segment within trajectory");
            history.push(Transition::from_step(step, &trajectory.root));
            let query = InteractionQuery {
                task: &task.instruction,
                basis: Some(basis),
                history: history.as_slice(),
                transition: history.current().expect("just pushed"),
            };
            let finding = backend.verify_unified(query).await?;
            let (true, Some(mode)) = (finding.has_defect, finding.defect.kind) else {
                continue;
            };
            out.positive_judgments += 1;
            let claimed = finding.defect.step;
            match usize::try_from(claimed).ok().filter(|s| segment.contains(*s)) {
                Some(at) => out.verified.push(VerifiedDefect {
                    step: at,
                    fault_mode: mode,
                    evidence: finding.defect.evidence.clone(),
                    reason: finding.defect.reason.clone(),
                    locator: finding.defect.effect.clone(),
                }),
                None => out.audit.push(AuditEntry::new(
                    AuditStage::Unified,
                    Some(ordinal),
                    "discarded",
                    format!("{mode} reported at step {claimed}, outside segment"),
                )),
            }
        }
    }
    out.verified.sort();
    for v in &out.verified {
        out.audit.push(AuditEntry::new(AuditStage::Unified, Some(v.step), "finding", v.fault_mode.to_string()));
    }
    Ok(out)
}

/// True iff some claim agrees with some finding. An empty report or an
/// empty finding list is never consistent.
pub async fn check_consistency<B: JudgeBackend + ?Sized>(
    report: &DefectReport,
    verified: &[VerifiedDefect],
    mode: ConsistencyMode,
    rules: &ConsistencyRules,
    backend: &B,
) -> Result<(bool, Vec<AuditEntry>), BackendError> {
    let mut audit = Vec::new();
    for claim in &report.claims {
        for defect in verified {
            let agrees = match mode {
                ConsistencyMode::Deterministic => rules.supports(claim, defect),
                ConsistencyMode::Model => backend.judge_consistency(claim, defect).await?.consistent,
            };
            if agrees {
                audit.push(AuditEntry::new(
                    AuditStage::Consistency,
                    Some(defect.step),
                    "consistent",
                    format!("claim at step {} matches {}", claim.step, defect.fault_mode),
                ));
                return Ok((true, audit));
            }
        }
    }
    if !report.claims.is_empty() && !verified.is_empty() {
        audit.push(AuditEntry::new(
            AuditStage::Consistency,
            None,
            "inconsistent",
            format!("{} claim(s) vs {} finding(s)", report.claims.len(), verified.len()),
        ));
    }
    Ok((false, audit))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierRouting {
    /// Run the verifier matching the case's defect class.
    #[default]
    ByCaseClass,
    /// Run both typed verifiers.
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOptions {
    /// Treat the whole trajectory as one segment.
    #[serde(default)]
    pub ablate_retrieval: bool,
    /// Replace both typed verifiers by the merged one.
    #[serde(default)]
    pub unified_verifier: bool,
    #[serde(default)]
    pub routing: VerifierRouting,
    #[serde(default)]
    pub consistency_mode: ConsistencyMode,
    #[serde(default)]
    pub consistency: ConsistencyRules,
    /// Only findings of the case's preset fault mode can establish Detect.
    #[serde(default)]
    pub strict_fault_mode: bool,
    /// Fan-out for display judgments; 0 means the backend's own budget.
    #[serde(default)]
    pub display_concurrency: usize,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    /// The judge backend failed; the unit is excluded from metrics.
    #[error("unscored: {0}")]
    Unscored(#[from] BackendError),
    #[error("trajectory task `{0}` is not part of the case")]
    TaskMismatch(String),
    #[error("internal verdict invariant violated: {0}")]
    Invariant(#[from] VerdictViolation),
}

/// Judges one trajectory end to end.
pub async fn judge_trajectory<B: JudgeBackend + ?Sized>(
    case: &EvaluationCase,
    task: &NavigationTask,
    trajectory: &Trajectory,
    backend: &B,
    options: &JudgeOptions,
) -> Result<Verdict, JudgeError> {
    if trajectory.task_id != task.task_id || case.task(&task.task_id).is_none() {
        return Err(JudgeError::TaskMismatch(trajectory.task_id.clone()));
    }
    let class = case.defect_class();
    let basis = &case.test_basis;
    let mut audit = Vec::new();

    let (reach, segments) = if options.ablate_retrieval {
        audit.push(AuditEntry::new(AuditStage::Retrieval, None, "ablated", "whole trajectory is one segment"));
        let whole: Vec<Segment> = Segment::whole(trajectory.len()).into_iter().collect();
        (!whole.is_empty(), whole)
    } else {
        let r = retrieve_segments(trajectory, basis, backend).await?;
        audit.extend(r.audit);
        (r.reach, r.segments)
    };

    let concurrency = match options.display_concurrency {
        0 => backend.concurrency_budget(),
        n => n,
    };

    let mut verified = Vec::new();
    let mut candidates = Vec::new();
    let mut triggered = false;
    if options.unified_verifier {
        let f = verify_unified(&segments, trajectory, task, basis, backend).await?;
        audit.extend(f.audit);
        triggered = !f.verified.is_empty();
        candidates.extend(f.verified.iter().cloned());
        verified.extend(f.verified);
    } else {
        let run_display = class == DefectClass::Display || options.routing == VerifierRouting::Both;
        let run_interaction = class == DefectClass::Interaction || options.routing == VerifierRouting::Both;
        if run_display {
            let f = verify_display(&segments, trajectory, backend, concurrency).await?;
            audit.extend(f.audit);
            if class == DefectClass::Display {
                candidates.extend(f.verified.iter().cloned());
            }
            verified.extend(f.verified);
        }
        if run_interaction {
            let f = verify_interaction(&segments, trajectory, task, basis, backend).await?;
            audit.extend(f.audit);
            if class == DefectClass::Interaction {
                triggered = !f.verified.is_empty();
                candidates.extend(f.verified.iter().cloned());
            }
            verified.extend(f.verified);
        }
    }
    if options.strict_fault_mode {
        candidates.retain(|v| v.fault_mode == case.fault_mode);
    }
    candidates.sort();

    let detect = if candidates.is_empty() {
        false
    } else {
        let (ok, lines) = check_consistency(
            &trajectory.report,
            &candidates,
            options.consistency_mode,
            &options.consistency,
            backend,
        )
        .await?;
        audit.extend(lines);
        ok
    };

    let trigger = match class {
        DefectClass::Display => Trigger::NotApplicable,
        DefectClass::Interaction => Trigger::from_bool(triggered),
    };
    Ok(Verdict::new(class, reach, trigger, detect, verified, segments, audit)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim(step: usize, mode: Option<FaultMode>, d: &str) -> Claim {
        Claim {
            step,
            claimed_fault_mode: mode,
            description: d.into(),
        }
    }

    fn defect(step: usize, mode: FaultMode) -> VerifiedDefect {
        VerifiedDefect {
            step,
            fault_mode: mode,
            evidence: vec![],
            reason: String::new(),
            locator: String::new(),
        }
    }

    /// Enumerates the deterministic truth table: step offset x claimed mode
    /// x keyword presence.
    #[test]
    fn deterministic_truth_table() {
        let rules = ConsistencyRules::default();
        let onr = FaultMode::OperationNoResponse;
        let v = defect(4, onr);
        for claim_step in 1..=9usize {
            for claimed in [None, Some(onr), Some(FaultMode::UnexpectedTaskResult)] {
                for desc in ["search did nothing", "the app looks odd"] {
                    let in_window = claim_step.abs_diff(4) <= 1;
                    let mode_ok = match claimed {
                        Some(m) => m == onr,
                        None => desc.contains("did nothing"),
                    };
                    let expected = in_window && mode_ok;
                    assert_eq!(
                        rules.supports(&claim(claim_step, claimed, desc), &v),
                        expected,
                        "step={claim_step} claimed={claimed:?} desc={desc}"
                    );
                }
            }
        }
    }

    #[test]
    fn window_is_configurable() {
        let rules = ConsistencyRules {
            window: 0,
            ..ConsistencyRules::default()
        };
        let onr = FaultMode::OperationNoResponse;
        assert!(!rules.supports(&claim(3, Some(onr), "x"), &defect(4, onr)));
        assert!(rules.supports(&claim(4, Some(onr), "x"), &defect(4, onr)));
    }

    #[tokio::test]
    async fn empty_report_is_inconsistent() {
        let backend = crate::backend::MockBackend::default();
        let (ok, _) = check_consistency(
            &DefectReport::default(),
            &[defect(4, FaultMode::OperationNoResponse)],
            ConsistencyMode::Deterministic,
            &ConsistencyRules::default(),
            &backend,
        )
        .await
        .unwrap();
        assert!(!ok);
    }

    #[tokio::test]
    async fn claim_far_from_finding() {
        let backend = crate::backend::MockBackend::default();
        let report = DefectReport {
            claims: vec![claim(9, Some(FaultMode::OperationNoResponse), "search did nothing")],
        };
        for mode in [ConsistencyMode::Deterministic, ConsistencyMode::Model] {
            let (ok, _) = check_consistency(
                &report,
                &[defect(4, FaultMode::OperationNoResponse)],
                mode,
                &ConsistencyRules::default(),
                &backend,
            )
            .await
            .unwrap();
            assert!(!ok);
        }
    }

    #[tokio::test]
    async fn keyword_claim_matches() {
        let backend = crate::backend::MockBackend::default();
        let report = DefectReport {
            claims: vec![claim(4, None, "Search did nothing")],
        };
        let (ok, audit) = check_consistency(
            &report,
            &[defect(4, FaultMode::OperationNoResponse)],
            ConsistencyMode::Deterministic,
            &ConsistencyRules::default(),
            &backend,
        )
        .await
        .unwrap();
        assert!(ok);
        assert_eq!(audit.len(), 1);
    }
}
