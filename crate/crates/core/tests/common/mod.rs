#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use judge_core::backend::{
    BackendConfig, BackendError, ConsistencyAnswer, ConsistencyJudge, DisplayFinding, DisplayJudge, InteractionFinding,
    InteractionJudge, InteractionQuery, JudgeBackend, MockBackend, MockRuleTable, Transport, TransportError,
    UnifiedFinding, UnifiedJudge,
};
use judge_core::model::{
    BasisRole, Claim, DefectReport, EvaluationCase, FaultMode, NavigationTask, Observation, Scenario, Step, TestBasis,
    Trajectory, VerifiedDefect,
};
use judge_core::retriever::{MatchQuery, MatchResult, StateMatcher};
use judge_core::runner::RunConfig;
use serde_json::{json, Value};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn schemas_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Run configuration equivalent to `judge run --backend mock` with defaults.
pub fn golden_config(out: &Path) -> RunConfig {
    let g = golden_dir();
    RunConfig::new(g.join("cases"), g.join("trajectories"), out, BackendConfig::mock(MockRuleTable::default()))
}

pub const PRE: &str = "KP:PRECOND";
pub const EVI: &str = "KP:EVIDENCE";

pub fn step(index: usize, action: &str, pre: &str, post: &str, hit: bool) -> Step {
    Step {
        index,
        thought: String::new(),
        action: action.into(),
        target: String::new(),
        hit,
        pre_image: PathBuf::from(format!("s{}.png", index - 1)),
        post_image: PathBuf::from(format!("s{index}.png")),
        pre_text: Some(pre.into()),
        post_text: Some(post.into()),
    }
}

pub fn trajectory(steps: Vec<Step>, claims: Vec<Claim>) -> Trajectory {
    Trajectory {
        run_id: "r".into(),
        model_id: "m".into(),
        case_id: "c".into(),
        task_id: "t".into(),
        steps,
        report: DefectReport { claims },
        root: PathBuf::new(),
    }
}

/// Trajectory whose post-states carry the retrieval markers given by
/// `(precondition, evidence)` flags.
pub fn flag_trajectory(flags: &[(bool, bool)]) -> Trajectory {
    let mut prev = String::from("start");
    let steps = flags
        .iter()
        .enumerate()
        .map(|(i, (p, e))| {
            let mut post = format!("state{}", i + 1);
            if *p {
                post.push(' ');
                post.push_str(PRE);
            }
            if *e {
                post.push(' ');
                post.push_str(EVI);
            }
            let s = step(i + 1, "tap", &prev, &post, true);
            prev = post;
            s
        })
        .collect();
    trajectory(steps, vec![])
}

pub fn basis() -> TestBasis {
    TestBasis {
        precondition: format!("target page {PRE}"),
        trigger: String::new(),
        evidence: format!("result page {EVI}"),
        deterministic_labels: None,
    }
}

pub fn case(mode: FaultMode) -> EvaluationCase {
    EvaluationCase {
        case_id: "c".into(),
        app_id: "app".into(),
        app_category: "Tools".into(),
        fault_mode: mode,
        defect_description: "d".into(),
        scenario: Scenario::default(),
        test_basis: basis(),
        tasks: vec![task()],
    }
}

pub fn task() -> NavigationTask {
    NavigationTask {
        task_id: "t".into(),
        instruction: "do the thing".into(),
        entry_point: String::new(),
    }
}

pub fn claim(step: usize, mode: Option<FaultMode>, description: &str) -> Claim {
    Claim {
        step,
        claimed_fault_mode: mode,
        description: description.into(),
    }
}

/// Counts calls per capability and forwards to an inner backend.
pub struct CountingBackend {
    pub inner: Arc<dyn JudgeBackend>,
    pub matches: AtomicUsize,
    pub display: AtomicUsize,
    pub interaction: AtomicUsize,
    pub unified: AtomicUsize,
    pub consistency: AtomicUsize,
    /// History length seen by each interaction call, with its ordinal.
    pub histories: Mutex<Vec<(usize, Vec<usize>)>>,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn JudgeBackend>) -> Self {
        CountingBackend {
            inner,
            matches: AtomicUsize::new(0),
            display: AtomicUsize::new(0),
            interaction: AtomicUsize::new(0),
            unified: AtomicUsize::new(0),
            consistency: AtomicUsize::new(0),
            histories: Mutex::new(Vec::new()),
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::default()))
    }

    pub fn total(&self) -> usize {
        [&self.matches, &self.display, &self.interaction, &self.unified, &self.consistency]
            .iter()
            .map(|c| c.load(Ordering::SeqCst))
            .sum()
    }
}

#[async_trait]
impl StateMatcher for CountingBackend {
    async fn match_state(&self, query: MatchQuery<'_>) -> Result<MatchResult, BackendError> {
        self.matches.fetch_add(1, Ordering::SeqCst);
        self.inner.match_state(query).await
    }
}

#[async_trait]
impl DisplayJudge for CountingBackend {
    async fn verify_display_state(&self, observation: &Observation) -> Result<DisplayFinding, BackendError> {
        self.display.fetch_add(1, Ordering::SeqCst);
        self.inner.verify_display_state(observation).await
    }
}

#[async_trait]
impl InteractionJudge for CountingBackend {
    async fn verify_interaction_transition(&self, query: InteractionQuery<'_>) -> Result<InteractionFinding, BackendError> {
        self.interaction.fetch_add(1, Ordering::SeqCst);
        self.histories
            .lock()
            .unwrap()
            .push((query.transition.ordinal, query.history.iter().map(|t| t.ordinal).collect()));
        self.inner.verify_interaction_transition(query).await
    }
}

#[async_trait]
impl UnifiedJudge for CountingBackend {
    async fn verify_unified(&self, query: InteractionQuery<'_>) -> Result<UnifiedFinding, BackendError> {
        self.unified.fetch_add(1, Ordering::SeqCst);
        self.inner.verify_unified(query).await
    }
}

#[async_trait]
impl ConsistencyJudge for CountingBackend {
    async fn judge_consistency(&self, claim: &Claim, defect: &VerifiedDefect) -> Result<ConsistencyAnswer, BackendError> {
        self.consistency.fetch_add(1, Ordering::SeqCst);
        self.inner.judge_consistency(claim, defect).await
    }
}

impl JudgeBackend for CountingBackend {
    fn concurrency_budget(&self) -> usize {
        self.inner.concurrency_budget()
    }
}

/// Backend whose every capability fails.
pub struct FailingBackend;

fn outage() -> BackendError {
    BackendError::Failure {
        attempts: 3,
        last: "HTTP 503: upstream unavailable".into(),
    }
}

#[async_trait]
impl StateMatcher for FailingBackend {
    async fn match_state(&self, _: MatchQuery<'_>) -> Result<MatchResult, BackendError> {
        Err(outage())
    }
}

#[async_trait]
impl DisplayJudge for FailingBackend {
    async fn verify_display_state(&self, _: &Observation) -> Result<DisplayFinding, BackendError> {
        Err(outage())
    }
}

#[async_trait]
impl InteractionJudge for FailingBackend {
    async fn verify_interaction_transition(&self, _: InteractionQuery<'_>) -> Result<InteractionFinding, BackendError> {
        Err(outage())
    }
}

#[async_trait]
impl UnifiedJudge for FailingBackend {
    async fn verify_unified(&self, _: InteractionQuery<'_>) -> Result<UnifiedFinding, BackendError> {
        Err(outage())
    }
}

#[async_trait]
impl ConsistencyJudge for FailingBackend {
    async fn judge_consistency(&self, _: &Claim, _: &VerifiedDefect) -> Result<ConsistencyAnswer, BackendError> {
        Err(outage())
    }
}

impl JudgeBackend for FailingBackend {}

/// Replies with canned message contents in order, then repeats the last.
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<Result<String, TransportError>>>,
    pub calls: AtomicUsize,
    pub requests: Mutex<Vec<Value>>,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<Result<String, TransportError>>) -> Self {
        ScriptedTransport {
            replies: Mutex::new(replies.into()),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn contents(replies: &[&str]) -> Self {
        Self::new(replies.iter().map(|r| Ok(r.to_string())).collect())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

pub fn completion(content: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
}

#[async_trait]
impl Transport for ScriptedTransport {
    async fn send(&self, request: &Value) -> Result<Value, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        let mut q = self.replies.lock().unwrap();
        let next = if q.len() > 1 { q.pop_front() } else { q.front().cloned() };
        match next.expect("script has at least one reply") {
            Ok(content) => Ok(completion(&content)),
            Err(e) => Err(e),
        }
    }
}

pub fn role_markers() -> [(BasisRole, &'static str); 2] {
    [(BasisRole::Precondition, PRE), (BasisRole::Evidence, EVI)]
}

pub mod fuzz {
    use super::*;
    use judge_core::verifiers::{ConsistencyMode, JudgeOptions, VerifierRouting};
    use proptest::prelude::*;

    const TOKENS: [&str; 8] = [PRE, EVI, "ANOMALY:CR", "ANOMALY:EL", "ANOMALY:NLE", "ANOMALY:ONR", "ANOMALY:UTR", "\u{25A1}\u{25A1}\u{25A1}"];
    const DESCRIPTIONS: [&str; 5] = [
        "text renders as squares",
        "icons overlap the labels",
        "returned to the main interface",
        "the button did nothing",
        "nothing looks wrong",
    ];

    #[derive(Debug, Clone)]
    pub struct Scenario {
        pub mode: FaultMode,
        pub trajectory: Trajectory,
        pub options: JudgeOptions,
    }

    fn step_strategy() -> impl Strategy<Value = (Vec<bool>, bool, bool, bool)> {
        (
            prop::collection::vec(prop::bool::weighted(0.15), TOKENS.len()),
            prop::bool::ANY,
            prop::bool::weighted(0.3),
            prop::bool::weighted(0.9),
        )
    }

    fn claim_strategy(n: usize) -> impl Strategy<Value = Vec<Claim>> {
        prop::collection::vec(
            (1..=n.max(1), prop::option::of(prop::sample::select(FaultMode::ALL.to_vec())), prop::sample::select(DESCRIPTIONS.to_vec())),
            0..3,
        )
        .prop_map(|cs| cs.into_iter().map(|(s, m, d)| claim(s, m, d)).collect())
    }

    fn options_strategy() -> impl Strategy<Value = JudgeOptions> {
        (prop::bool::weighted(0.2), prop::bool::weighted(0.2), prop::bool::ANY, prop::bool::ANY, prop::bool::weighted(0.3))
            .prop_map(|(ablate, unified, both, model, strict)| JudgeOptions {
                ablate_retrieval: ablate,
                unified_verifier: unified,
                routing: if both { VerifierRouting::Both } else { VerifierRouting::ByCaseClass },
                consistency_mode: if model { ConsistencyMode::Model } else { ConsistencyMode::Deterministic },
                strict_fault_mode: strict,
                ..JudgeOptions::default()
            })
    }

    pub fn scenario() -> impl Strategy<Value = Scenario> {
        (prop::collection::vec(step_strategy(), 0..=12), prop::sample::select(FaultMode::ALL.to_vec()), options_strategy())
            .prop_flat_map(|(steps, mode, options)| {
                let n = steps.len();
                (Just(steps), Just(mode), Just(options), claim_strategy(n))
            })
            .prop_map(|(raw, mode, options, claims)| {
                let mut prev_post = String::from("launcher");
                let mut prev_base = String::from("launcher");
                let mut steps = Vec::new();
                for (i, (tokens, search, unchanged, hit)) in raw.into_iter().enumerate() {
                    let ordinal = i + 1;
                    let base = if unchanged { prev_base.clone() } else { format!("screen{ordinal}") };
                    let mut post = base.clone();
                    for (t, on) in TOKENS.iter().zip(tokens) {
                        if on {
                            post.push(' ');
                            post.push_str(t);
                        }
                    }
                    let action = if search { "tap search" } else { "tap item" };
                    steps.push(step(ordinal, action, &prev_post, &post, hit));
                    prev_post = post;
                    prev_base = base;
                }
                let claims = claims.into_iter().filter(|c| c.step <= steps.len()).collect();
                Scenario {
                    mode,
                    trajectory: trajectory(steps, claims),
                    options,
                }
            })
    }
}

/// Reference segmentation written from the definition: a segment opens at
/// the first precondition step at or after `from` and closes at the first
/// evidence step strictly after it; scanning resumes after the close.
pub fn oracle_segments(flags: &[(bool, bool)]) -> Vec<(usize, usize)> {
    fn go(flags: &[(bool, bool)], from: usize, out: &mut Vec<(usize, usize)>) {
        let Some(s) = (from..=flags.len()).find(|&i| flags[i - 1].0) else {
            return;
        };
        let Some(u) = (s + 1..=flags.len()).find(|&i| flags[i - 1].1) else {
            return;
        };
        out.push((s, u));
        go(flags, u + 1, out);
    }
    let mut out = Vec::new();
    go(flags, 1, &mut out);
    out
}
