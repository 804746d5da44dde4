//! Trajectory judging for GUI-testing agents: segment retrieval, defect
//! verification, benchmark metrics, a batch runner and an assist service.

pub mod backend;
pub mod bundle;
pub mod metrics;
pub mod model;
pub mod retriever;
pub mod runner;
pub mod service;
pub mod verifiers;

pub use backend::{build_backend, BackendConfig, BackendError, BackendKind, JudgeBackend, MockBackend, MockRuleTable};
pub use metrics::{aggregate_report, recall_f1, BenchmarkReport, ConfusionCounts, RunOutcome, Stage};
pub use model::{EvaluationCase, FaultMode, Segment, Trajectory, Trigger, Verdict};
pub use retriever::{retrieve_segments, StateMatcher};
pub use runner::{run_evaluation, RunConfig};
pub use verifiers::{judge_trajectory, JudgeOptions};

/// Scores in double precision, as written to reports.
pub type Scores = metrics::Scores<f64>;
/// Scores in single precision.
pub type Scores32 = metrics::Scores<f32>;
