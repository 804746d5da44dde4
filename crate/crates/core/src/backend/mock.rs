//! Deterministic rule-table backend. Every answer is a pure function of the
//! input text, so verdicts produced with it can be frozen as golden files.
//!
//! Marker tokens (e.g. `KP:PRECOND`, `ANOMALY:EL`) are annotations on the
//! state text. They are excluded when the mock compares two states for
//! observable change.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::schema::{
    ConsistencyAnswer, DisplayDefect, DisplayFinding, InteractionDefect, InteractionFinding, UnifiedDefect,
    UnifiedFinding,
};
use super::{BackendError, ConsistencyJudge, DisplayJudge, InteractionJudge, InteractionQuery, JudgeBackend, UnifiedJudge};
use crate::model::{BasisRole, Claim, FaultMode, Observation, VerifiedDefect};
use crate::retriever::{MatchQuery, MatchResult, StateMatcher};
use crate::verifiers::ConsistencyRules;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayRule {
    pub marker: String,
    pub fault_mode: FaultMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionPredicate {
    /// Observable post-state equals the pre-state after an action whose
    /// text contains `action_contains` (case-insensitive).
    Unchanged { action_contains: String },
    /// Post-state text contains `marker`.
    PostContains { marker: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRule {
    pub when: TransitionPredicate,
    pub fault_mode: FaultMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRuleTable {
    /// Marker token per basis role; a case's own deterministic labels take
    /// precedence.
    pub state_markers: BTreeMap<BasisRole, String>,
    pub display_rules: Vec<DisplayRule>,
    /// First matching rule wins.
    pub interaction_rules: Vec<InteractionRule>,
    pub consistency: ConsistencyRules,
}

impl Default for MockRuleTable {
    fn default() -> Self {
        let display = |marker: &str, fault_mode| DisplayRule {
            marker: marker.into(),
            fault_mode,
        };
        let post = |marker: &str, fault_mode| InteractionRule {
            when: TransitionPredicate::PostContains {
                marker: marker.into(),
            },
            fault_mode,
        };
        MockRuleTable {
            state_markers: BTreeMap::from([
                (BasisRole::Precondition, "KP:PRECOND".to_string()),
                (BasisRole::Trigger, "KP:TRIGGER".to_string()),
                (BasisRole::Evidence, "KP:EVIDENCE".to_string()),
            ]),
            display_rules: vec![
                display("ANOMALY:CR", FaultMode::ContentRendering),
                display("ANOMALY:EL", FaultMode::ElementLayout),
                // tofu glyphs: text that failed to render
                display("\u{25A1}\u{25A1}\u{25A1}", FaultMode::ContentRendering),
            ],
            interaction_rules: vec![
                InteractionRule {
                    when: TransitionPredicate::Unchanged {
                        action_contains: "search".into(),
                    },
                    fault_mode: FaultMode::OperationNoResponse,
                },
                post("ANOMALY:ONR", FaultMode::OperationNoResponse),
                post("ANOMALY:NLE", FaultMode::NavigationLogicError),
                post("ANOMALY:UTR", FaultMode::UnexpectedTaskResult),
            ],
            consistency: ConsistencyRules::default(),
        }
    }
}

impl MockRuleTable {
    fn marker_for<'a>(&'a self, query: &MatchQuery<'a>) -> Option<&'a str> {
        query
            .basis
            .label(query.role)
            .or_else(|| self.state_markers.get(&query.role).map(String::as_str))
    }

    fn annotation_markers<'a>(&'a self, query: &InteractionQuery<'a>) -> Vec<&'a str> {
        let mut markers: Vec<&str> = self.state_markers.values().map(String::as_str).collect();
        if let Some(labels) = query.basis.and_then(|b| b.deterministic_labels.as_ref()) {
            markers.extend(labels.values().map(String::as_str));
        }
        markers.extend(self.display_rules.iter().map(|r| r.marker.as_str()));
        for rule in &self.interaction_rules {
            if let TransitionPredicate::PostContains { marker } = &rule.when {
                markers.push(marker);
            }
        }
        markers
    }

    /// State text with annotation tokens removed and whitespace normalized.
    pub fn observable(text: &str, markers: &[&str]) -> String {
        text.split_whitespace()
            .filter(|tok| !markers.iter().any(|m| !m.is_empty() && tok.contains(m)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn display_finding(&self, observation: &Observation) -> DisplayFinding {
        let text = observation.text_or_empty();
        let defects: Vec<DisplayDefect> = self
            .display_rules
            .iter()
            .filter(|r| !r.marker.is_empty() && text.contains(&r.marker))
            .map(|r| DisplayDefect {
                kind: Some(r.fault_mode),
                evidence: vec![format!("state shows `{}`", r.marker)],
                location_hint: locate(text, &r.marker),
                reason: format!("marker rule for {}", r.fault_mode.short_code()),
            })
            .collect();
        DisplayFinding {
            has_defect: !defects.is_empty(),
            defects,
        }
    }

    fn interaction_match(&self, query: &InteractionQuery<'_>) -> Option<FaultMode> {
        let t = query.transition;
        if !t.hit {
            return None;
        }
        let markers = self.annotation_markers(query);
        let pre = t.pre.text_or_empty();
        let post = t.post.text_or_empty();
        self.interaction_rules
            .iter()
            .find(|rule| match &rule.when {
                TransitionPredicate::Unchanged { action_contains } => {
                    t.action.to_lowercase().contains(&action_contains.to_lowercase())
                        && Self::observable(pre, &markers) == Self::observable(post, &markers)
                }
                TransitionPredicate::PostContains { marker } => !marker.is_empty() && post.contains(marker),
            })
            .map(|rule| rule.fault_mode)
    }

    pub fn interaction_finding(&self, query: &InteractionQuery<'_>) -> InteractionFinding {
        let t = query.transition;
        match self.interaction_match(query) {
            Some(mode) => InteractionFinding {
                has_defect: true,
                defect: InteractionDefect {
                    kind: Some(mode),
                    step: t.ordinal as i64,
                    reason: format!("transition rule for {}", mode.short_code()),
                    effect: Self::observable(t.post.text_or_empty(), &self.annotation_markers(query)),
                },
            },
            None => InteractionFinding {
                has_defect: false,
                defect: InteractionDefect {
                    kind: None,
                    step: t.ordinal as i64,
                    reason: if t.hit {
                        "no transition rule matched".into()
                    } else {
                        "hit=false: the agent did not actuate the intended control".into()
                    },
                    effect: String::new(),
                },
            },
        }
    }

    pub fn unified_finding(&self, query: &InteractionQuery<'_>) -> UnifiedFinding {
        let t = query.transition;
        let interaction = self.interaction_finding(query);
        if interaction.has_defect {
            return UnifiedFinding {
                has_defect: true,
                defect: UnifiedDefect {
                    kind: interaction.defect.kind,
                    step: interaction.defect.step,
                    evidence: vec![interaction.defect.effect.clone()],
                    reason: interaction.defect.reason,
                    effect: interaction.defect.effect,
                },
            };
        }
        let display = self.display_finding(&t.post);
        match display.defects.into_iter().next() {
            Some(d) => UnifiedFinding {
                has_defect: true,
                defect: UnifiedDefect {
                    kind: d.kind,
                    step: t.ordinal as i64,
                    evidence: d.evidence,
                    reason: d.reason,
                    effect: d.location_hint,
                },
            },
            None => UnifiedFinding {
                has_defect: false,
                defect: UnifiedDefect {
                    step: t.ordinal as i64,
                    reason: "no rule matched".into(),
                    ..Default::default()
                },
            },
        }
    }
}

/// The `|`- or newline-delimited fragment holding `marker`.
fn locate(text: &str, marker: &str) -> String {
    text.split(['\n', '|'])
        .find(|frag| frag.contains(marker))
        .map(str::trim)
        .unwrap_or_default()
        .to_string()
}

/// Rule-table backend.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: MockRuleTable,
}

impl MockBackend {
    pub fn new(rules: MockRuleTable) -> Self {
        MockBackend { rules }
    }

    pub fn rules(&self) -> &MockRuleTable {
        &self.rules
    }
}

#[async_trait]
impl StateMatcher for MockBackend {
    async fn match_state(&self, query: MatchQuery<'_>) -> Result<MatchResult, BackendError> {
        let text = query.step.text(query.side);
        let side = match query.side {
            crate::model::StateSide::Pre => "pre",
            crate::model::StateSide::Post => "post",
        };
        Ok(match self.rules.marker_for(&query) {
            Some(marker) if !marker.is_empty() && text.contains(marker) => MatchResult {
                matched: true,
                reason: format!("marker `{marker}` present in {side}-state"),
            },
            Some(marker) => MatchResult {
                matched: false,
                reason: format!("marker `{marker}` absent from {side}-state"),
            },
            None => MatchResult {
                matched: false,
                reason: format!("no marker configured for {}", query.role),
            },
        })
    }
}

#[async_trait]
impl DisplayJudge for MockBackend {
    async fn verify_display_state(&self, observation: &Observation) -> Result<DisplayFinding, BackendError> {
        Ok(self.rules.display_finding(observation))
    }
}

#[async_trait]
impl InteractionJudge for MockBackend {
    async fn verify_interaction_transition(
        &self,
        query: InteractionQuery<'_>,
    ) -> Result<InteractionFinding, BackendError> {
        Ok(self.rules.interaction_finding(&query))
    }
}

#[async_trait]
impl UnifiedJudge for MockBackend {
    async fn verify_unified(&self, query: InteractionQuery<'_>) -> Result<UnifiedFinding, BackendError> {
        Ok(self.rules.unified_finding(&query))
    }
}

#[async_trait]
impl ConsistencyJudge for MockBackend {
    async fn judge_consistency(
        &self,
        claim: &Claim,
        defect: &VerifiedDefect,
    ) -> Result<ConsistencyAnswer, BackendError> {
        let consistent = self.rules.consistency.supports(claim, defect);
        Ok(ConsistencyAnswer {
            consistent,
            reason: if consistent {
                "step window and description agree".into()
            } else {
                "claim does not describe the verified defect".into()
            },
        })
    }
}

impl JudgeBackend for MockBackend {
    fn concurrency_budget(&self) -> usize {
        16
    }
}
