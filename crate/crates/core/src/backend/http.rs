//! Remote judge: renders prompt templates and completes them against a
//! chat-completion endpoint (or a cassette standing in for one).

use std::sync::Arc;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use super::prompt::{render_prompt, Message, PromptContext, PromptTemplate, TemplateId};
use super::schema::{ConsistencyAnswer, DisplayFinding, InteractionFinding, StructuredOutput, UnifiedFinding};
use super::structured::complete_structured;
use super::transport::Transport;
use super::{
    BackendConfig, BackendError, ConsistencyJudge, DisplayJudge, InteractionJudge, InteractionQuery, JudgeBackend,
    UnifiedJudge,
};
use crate::model::{Claim, ImageSource, Observation, StateSide, VerifiedDefect};
use crate::retriever::{MatchQuery, MatchResult, StateMatcher};
use crate::verifiers::Transition;

const NOT_PROVIDED: &str = "(not provided)";

pub struct HttpBackend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    budget: Arc<Semaphore>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        let budget = Arc::new(Semaphore::new(config.concurrency_budget.max(1)));
        HttpBackend {
            config,
            transport,
            budget,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    async fn complete<T: StructuredOutput>(&self, id: TemplateId, ctx: &PromptContext) -> Result<T, BackendError> {
        let messages: Vec<Message> = render_prompt(id, ctx)?;
        let _permit = self.budget.acquire().await.expect("semaphore never closed");
        complete_structured(
            self.transport.as_ref(),
            &self.config,
            &messages,
            PromptTemplate::get(id).output_schema,
        )
        .await
    }
}

fn or_placeholder(s: &str) -> String {
    if s.trim().is_empty() {
        NOT_PROVIDED.to_string()
    } else {
        s.to_string()
    }
}

/// One entry per transition in the history, oldest first.
pub fn format_history(history: &[Transition]) -> String {
    if history.is_empty() {
        return NOT_PROVIDED.to_string();
    }
    history
        .iter()
        .map(|t| {
            format!(
                "[History step {}] action: {}; target: {}; hit: {}\n  pre-state: {}\n  post-state: {}",
                t.ordinal,
                t.action,
                or_placeholder(&t.target),
                t.hit,
                or_placeholder(t.pre.text_or_empty()),
                or_placeholder(t.post.text_or_empty()),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn retrieval_context(query: &MatchQuery<'_>) -> PromptContext {
    let side = match query.side {
        StateSide::Pre => "pre",
        StateSide::Post => "post",
    };
    PromptContext::new()
        .with("current_kp", query.description())
        .with("step", query.step.index.to_string())
        .with("side", side)
        .with("observation_text", or_placeholder(query.step.text(query.side)))
        .with_image(
            side,
            Some(ImageSource::Path {
                path: query.root.join(query.step.image(query.side)),
            }),
        )
}

pub fn display_context(observation: &Observation) -> PromptContext {
    PromptContext::new()
        .with("observation_text", or_placeholder(observation.text_or_empty()))
        .with_image("state", observation.image.clone())
}

pub fn interaction_context(query: &InteractionQuery<'_>) -> PromptContext {
    let t = query.transition;
    let basis = |f: fn(&crate::model::TestBasis) -> &str| {
        query.basis.map(f).map(or_placeholder).unwrap_or_else(|| NOT_PROVIDED.into())
    };
    PromptContext::new()
        .with("task", query.task)
        .with("precondition", basis(|b| &b.precondition))
        .with("trigger", basis(|b| &b.trigger))
        .with("evidence", basis(|b| &b.evidence))
        .with("history", format_history(query.history))
        .with("step", t.ordinal.to_string())
        .with("thought", or_placeholder(&t.thought))
        .with("action", t.action.clone())
        .with("target", or_placeholder(&t.target))
        .with("hit", t.hit.to_string())
        .with("pre_state", or_placeholder(t.pre.text_or_empty()))
        .with("post_state", or_placeholder(t.post.text_or_empty()))
        .with_image("pre", t.pre.image.clone())
        .with_image("post", t.post.image.clone())
}

pub fn consistency_context(claim: &Claim, defect: &VerifiedDefect) -> PromptContext {
    PromptContext::new()
        .with("claim_step", claim.step.to_string())
        .with(
            "claim_type",
            claim.claimed_fault_mode.map(|m| m.as_str()).unwrap_or(NOT_PROVIDED),
        )
        .with("claim_description", claim.description.clone())
        .with("defect_step", defect.step.to_string())
        .with("defect_type", defect.fault_mode.as_str())
        .with("defect_reason", or_placeholder(&defect.reason))
        .with("defect_evidence", or_placeholder(&defect.evidence.join("; ")))
}

#[async_trait]
impl StateMatcher for HttpBackend {
    async fn match_state(&self, query: MatchQuery<'_>) -> Result<MatchResult, BackendError> {
        self.complete(TemplateId::Retrieval, &retrieval_context(&query)).await
    }
}

#[async_trait]
impl DisplayJudge for HttpBackend {
    async fn verify_display_state(&self, observation: &Observation) -> Result<DisplayFinding, BackendError> {
        self.complete(TemplateId::Display, &display_context(observation)).await
    }
}

#[async_trait]
impl InteractionJudge for HttpBackend {
    async fn verify_interaction_transition(
        &self,
        query: InteractionQuery<'_>,
    ) -> Result<InteractionFinding, BackendError> {
        self.complete(TemplateId::Interaction, &interaction_context(&query)).await
    }
}

#[async_trait]
impl UnifiedJudge for HttpBackend {
    async fn verify_unified(&self, query: InteractionQuery<'_>) -> Result<UnifiedFinding, BackendError> {
        self.complete(TemplateId::Unified, &interaction_context(&query)).await
    }
}

#[async_trait]
impl ConsistencyJudge for HttpBackend {
    async fn judge_consistency(
        &self,
        claim: &Claim,
        defect: &VerifiedDefect,
    ) -> Result<ConsistencyAnswer, BackendError> {
        self.complete(TemplateId::Consistency, &consistency_context(claim, defect)).await
    }
}

impl JudgeBackend for HttpBackend {
    fn concurrency_budget(&self) -> usize {
        self.config.concurrency_budget.max(1)
    }
}
