//! Domain types shared by every stage: evaluation cases, trajectories, agent
//! reports, retrieved segments, verified findings and verdicts.
//!
//! All step ordinals are 1-based.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Preset defect category of an evaluation case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultMode {
    #[serde(rename = "DD.ContentRendering")]
    ContentRendering,
    #[serde(rename = "DD.ElementLayout")]
    ElementLayout,
    #[serde(rename = "ID.NavigationLogicError")]
    NavigationLogicError,
    #[serde(rename = "ID.OperationNoResponse")]
    OperationNoResponse,
    #[serde(rename = "ID.UnexpectedTaskResult")]
    UnexpectedTaskResult,
}

/// Display defects are visible in a single state; interaction defects live
/// in action/response transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Display,
    Interaction,
}

impl FaultMode {
    /// Table order: CR, EL, NLE, ONR, UTR.
    pub const ALL: [FaultMode; 5] = [
        FaultMode::ContentRendering,
        FaultMode::ElementLayout,
        FaultMode::NavigationLogicError,
        FaultMode::OperationNoResponse,
        FaultMode::UnexpectedTaskResult,
    ];

    pub fn defect_class(self) -> DefectClass {
        match self {
            FaultMode::ContentRendering | FaultMode::ElementLayout => DefectClass::Display,
            FaultMode::NavigationLogicError
            | FaultMode::OperationNoResponse
            | FaultMode::UnexpectedTaskResult => DefectClass::Interaction,
        }
    }

    /// Dotted identifier used in files and prompts.
    pub fn as_str(self) -> &'static str {
        match self {
            FaultMode::ContentRendering => "DD.ContentRendering",
            FaultMode::ElementLayout => "DD.ElementLayout",
            FaultMode::NavigationLogicError => "ID.NavigationLogicError",
            FaultMode::OperationNoResponse => "ID.OperationNoResponse",
            FaultMode::UnexpectedTaskResult => "ID.UnexpectedTaskResult",
        }
    }

    pub fn short_code(self) -> &'static str {
        match self {
            FaultMode::ContentRendering => "CR",
            FaultMode::ElementLayout => "EL",
            FaultMode::NavigationLogicError => "NLE",
            FaultMode::OperationNoResponse => "ONR",
            FaultMode::UnexpectedTaskResult => "UTR",
        }
    }

    pub fn of_class(class: DefectClass) -> impl Iterator<Item = FaultMode> {
        Self::ALL.into_iter().filter(move |m| m.defect_class() == class)
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown fault mode `{0}`")]
pub struct UnknownFaultMode(pub String);

impl FromStr for FaultMode {
    type Err = UnknownFaultMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownFaultMode(s.to_string()))
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefectClass::Display => "display",
            DefectClass::Interaction => "interaction",
        })
    }
}

/// Role a state description plays in the test basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisRole {
    Precondition,
    Trigger,
    Evidence,
}

impl fmt::Display for BasisRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisRole::Precondition => "precondition",
            BasisRole::Trigger => "trigger",
            BasisRole::Evidence => "evidence",
        })
    }
}

/// State-level test basis. The trigger description is carried as verifier
/// context only; retrieval matches precondition and evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestBasis {
    pub precondition: String,
    #[serde(default)]
    pub trigger: String,
    pub evidence: String,
    /// Marker tokens consumed by the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic_labels: Option<BTreeMap<BasisRole, String>>,
}

impl TestBasis {
    pub fn description(&self, role: BasisRole) -> &str {
        match role {
            BasisRole::Precondition => &self.precondition,
            BasisRole::Trigger => &self.trigger,
            BasisRole::Evidence => &self.evidence,
        }
    }

    pub fn label(&self, role: BasisRole) -> Option<&str> {
        self.deterministic_labels
            .as_ref()
            .and_then(|l| l.get(&role))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub reset_notes: String,
    #[serde(default)]
    pub initial_conditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigationTask {
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub entry_point: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationCase {
    pub case_id: String,
    pub app_id: String,
    pub app_category: String,
    pub fault_mode: FaultMode,
    pub defect_description: String,
    #[serde(default)]
    pub scenario: Scenario,
    pub test_basis: TestBasis,
    pub tasks: Vec<NavigationTask>,
}

impl EvaluationCase {
    pub fn defect_class(&self) -> DefectClass {
        self.fault_mode.defect_class()
    }

    pub fn task(&self, task_id: &str) -> Option<&NavigationTask> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

/// Where an image payload lives. Bytes are only read at transmission time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ImageSource {
    Path { path: PathBuf },
    Inline { media_type: String, data_base64: String },
}

/// One GUI state as presented to a judge: screenshot plus optional textual
/// or XML summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Observation {
    pub fn text_or_empty(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_none() && self.text.as_deref().is_none_or(str::is_empty)
    }
}

/// Which side of a step an observation is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSide {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    #[serde(default)]
    pub thought: String,
    pub action: String,
    #[serde(default)]
    pub target: String,
    /// Agent-claimed actuation of the intended control, carried verbatim.
    pub hit: bool,
    pub pre_image: PathBuf,
    pub post_image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_text: Option<String>,
}

impl Step {
    pub fn text(&self, side: StateSide) -> &str {
        match side {
            StateSide::Pre => self.pre_text.as_deref().unwrap_or(""),
            StateSide::Post => self.post_text.as_deref().unwrap_or(""),
        }
    }

    pub fn image(&self, side: StateSide) -> &Path {
        match side {
            StateSide::Pre => &self.pre_image,
            StateSide::Post => &self.post_image,
        }
    }

    /// Observation for one side, with the image resolved against `root`.
    pub fn observation(&self, side: StateSide, root: &Path) -> Observation {
        let text = match side {
            StateSide::Pre => self.pre_text.clone(),
            StateSide::Post => self.post_text.clone(),
        };
        Observation {
            image: Some(ImageSource::Path {
                path: root.join(self.image(side)),
            }),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_fault_mode: Option<FaultMode>,
    pub description: String,
}

/// Agent defect report. An absent report file is an empty claim list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectReport {
    #[serde(default)]
    pub claims: Vec<Claim>,
}

impl DefectReport {
    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub run_id: String,
    pub model_id: String,
    pub case_id: String,
    pub task_id: String,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub report: DefectReport,
    /// Bundle directory that relative image paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step by 1-based ordinal.
    pub fn step(&self, ordinal: usize) -> Option<&Step> {
        ordinal.checked_sub(1).and_then(|i| self.steps.get(i))
    }
}

/// A defect-relevant sub-trajectory `[start, end]`, both 1-based and
/// inclusive, opened by a precondition match and closed by the first later
/// evidence match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "SegmentRepr", into = "SegmentRepr")]
pub struct Segment {
    start: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("segment [{start}, {end}] must satisfy 1 <= start < end")]
    Bounds { start: usize, end: usize },
    #[error("segment role marks ({precondition_at}, {evidence_at}) disagree with bounds")]
    RoleMarks {
        precondition_at: usize,
        evidence_at: usize,
    },
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self, SegmentError> {
        if start == 0 || start >= end {
            return Err(SegmentError::Bounds { start, end });
        }
        Ok(Segment { start, end })
    }

    /// `[1, len]` used when retrieval is ablated. A one-step trajectory yields
    /// the degenerate `[1, 1]`.
    pub fn whole(len: usize) -> Option<Self> {
        (len > 0).then_some(Segment { start: 1, end: len })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn precondition_at(&self) -> usize {
        self.start
    }

    pub fn evidence_at(&self) -> usize {
        self.end
    }

    pub fn contains(&self, step: usize) -> bool {
        (self.start..=self.end).contains(&step)
    }

    /// Ordinals of states inside the segment.
    pub fn states(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    /// Ordinals of the steps whose pre/post pair forms a transition inside
    /// the segment: every step after the opening state.
    pub fn transition_steps(&self) -> std::ops::RangeInclusive<usize> {
        self.start + 1..=self.end
    }
}

#[derive(Serialize, Deserialize)]
struct RoleMarks {
    precondition_at: usize,
    evidence_at: usize,
}

#[derive(Serialize, Deserialize)]
struct SegmentRepr {
    start: usize,
    end: usize,
    role_marks: RoleMarks,
}

impl From<Segment> for SegmentRepr {
    fn from(s: Segment) -> Self {
        SegmentRepr {
            start: s.start,
            end: s.end,
            role_marks: RoleMarks {
                precondition_at: s.start,
                evidence_at: s.end,
            },
        }
    }
}

impl TryFrom<SegmentRepr> for Segment {
    type Error = SegmentError;

    fn try_from(r: SegmentRepr) -> Result<Self, Self::Error> {
        if r.role_marks.precondition_at != r.start || r.role_marks.evidence_at != r.end {
            return Err(SegmentError::RoleMarks {
                precondition_at: r.role_marks.precondition_at,
                evidence_at: r.role_marks.evidence_at,
            });
        }
        if r.start == 0 || r.start > r.end {
            return Err(SegmentError::Bounds {
                start: r.start,
                end: r.end,
            });
        }
        Ok(Segment {
            start: r.start,
            end: r.end,
        })
    }
}

/// A verifier finding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VerifiedDefect {
    pub step: usize,
    pub fault_mode: FaultMode,
    pub evidence: Vec<String>,
    pub reason: String,
    /// Location hint for display findings, effect summary for interaction
    /// findings.
    pub locator: String,
}

/// Trigger verdict. Display defects need no triggering interaction, so the
/// stage is not applicable to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Triggered,
    NotTriggered,
    NotApplicable,
}

impl Trigger {
    pub fn from_bool(triggered: bool) -> Self {
        if triggered {
            Trigger::Triggered
        } else {
            Trigger::NotTriggered
        }
    }

    pub fn is_triggered(self) -> bool {
        self == Trigger::Triggered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStage {
    Retrieval,
    Display,
    Interaction,
    Unified,
    Consistency,
}

/// One line of the per-trajectory audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: AuditStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub key: String,
    pub value: String,
}

impl AuditEntry {
    pub fn new(
        stage: AuditStage,
        step: Option<usize>,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        AuditEntry {
            stage,
            step,
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictViolation {
    #[error("detect without reach")]
    DetectWithoutReach,
    #[error("trigger without reach")]
    TriggerWithoutReach,
    #[error("display-class verdict must carry trigger=not_applicable")]
    DisplayTrigger,
    #[error("interaction-class verdict cannot carry trigger=not_applicable")]
    InteractionTriggerNotApplicable,
    #[error("interaction-class detect without trigger")]
    DetectWithoutTrigger,
}

/// Reach/Trigger/Detect verdict for one trajectory. Only constructible
/// through [`Verdict::new`], which rejects illegal stage combinations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VerdictRepr", into = "VerdictRepr")]
pub struct Verdict {
    class: DefectClass,
    reach: bool,
    trigger: Trigger,
    detect: bool,
    verified: Vec<VerifiedDefect>,
    segments: Vec<Segment>,
    diagnostics: Vec<AuditEntry>,
}

impl Verdict {
    pub fn new(
        class: DefectClass,
        reach: bool,
        trigger: Trigger,
        detect: bool,
        mut verified: Vec<VerifiedDefect>,
        segments: Vec<Segment>,
        diagnostics: Vec<AuditEntry>,
    ) -> Result<Self, VerdictViolation> {
        Self::check(class, reach, trigger, detect)?;
        verified.sort();
        Ok(Verdict {
            class,
            reach,
            trigger,
            detect,
            verified,
            segments,
            diagnostics,
        })
    }

    pub fn check(
        class: DefectClass,
        reach: bool,
        trigger: Trigger,
        detect: bool,
    ) -> Result<(), VerdictViolation> {
        if detect && !reach {
            return Err(VerdictViolation::DetectWithoutReach);
        }
        if trigger.is_triggered() && !reach {
            return Err(VerdictViolation::TriggerWithoutReach);
        }
        match class {
            DefectClass::Display if trigger != Trigger::NotApplicable => {
                Err(VerdictViolation::DisplayTrigger)
            }
            DefectClass::Interaction if trigger == Trigger::NotApplicable => {
                Err(VerdictViolation::InteractionTriggerNotApplicable)
            }
            DefectClass::Interaction if detect && !trigger.is_triggered() => {
                Err(VerdictViolation::DetectWithoutTrigger)
            }
            _ => Ok(()),
        }
    }

    pub fn class(&self) -> DefectClass {
        self.class
    }

    pub fn reach(&self) -> bool {
        self.reach
    }

    pub fn trigger(&self) -> Trigger {
        self.trigger
    }

    pub fn detect(&self) -> bool {
        self.detect
    }

    /// Findings sorted by step.
    pub fn verified(&self) -> &[VerifiedDefect] {
        &self.verified
    }

    /// Earliest finding by step.
    pub fn headline(&self) -> Option<&VerifiedDefect> {
        self.verified.first()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn diagnostics(&self) -> &[AuditEntry] {
        &self.diagnostics
    }
}

#[derive(Serialize, Deserialize)]
struct VerdictRepr {
    class: DefectClass,
    reach: bool,
    trigger: Trigger,
    detect: bool,
    verified: Vec<VerifiedDefect>,
    segments: Vec<Segment>,
    diagnostics: Vec<AuditEntry>,
}

impl From<Verdict> for VerdictRepr {
    fn from(v: Verdict) -> Self {
        VerdictRepr {
            class: v.class,
            reach: v.reach,
            trigger: v.trigger,
            detect: v.detect,
            verified: v.verified,
            segments: v.segments,
            diagnostics: v.diagnostics,
        }
    }
}

impl TryFrom<VerdictRepr> for Verdict {
    type Error = VerdictViolation;

    fn try_from(r: VerdictRepr) -> Result<Self, Self::Error> {
        Verdict::new(
            r.class,
            r.reach,
            r.trigger,
            r.detect,
            r.verified,
            r.segments,
            r.diagnostics,
        )
    }
}
