//! Batch evaluation over a cases tree and a trajectories tree.
//!
//! Runs are discovered by convention:
//! `trajectories/<model>/<case>/<task>/run_<n>/trajectory.json`, with cases
//! at `cases/<case>/case.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{build_backend, BackendConfig, BackendError, JudgeBackend};
use crate::bundle::{validate_case, validate_trajectory, BundleError, CASE_FILE, TRAJECTORY_FILE};
use crate::metrics::{aggregate_report, write_summary_csv, write_summary_md, Averaging, BenchmarkReport, ReportConfig, RunOutcome, Stage, UnitKey};
use crate::model::{EvaluationCase, FaultMode, Trajectory};
use crate::verifiers::{judge_trajectory, ConsistencyMode, ConsistencyRules, JudgeOptions, VerifierRouting};

pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const VERDICTS_JSONL: &str = "verdicts.jsonl";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    #[serde(default)]
    pub no_retrieval: bool,
    #[serde(default)]
    pub unified_verifier: bool,
}

/// Glob filters; an empty list admits everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filters {
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub cases: Vec<String>,
    /// Matched against both the short code (`ONR`) and the full name.
    #[serde(default)]
    pub fault_modes: Vec<String>,
}

impl Filters {
    fn compile(globs: &[String]) -> Result<Vec<glob::Pattern>, RunError> {
        globs
            .iter()
            .map(|g| glob::Pattern::new(g).map_err(|e| RunError::Config(format!("bad filter `{g}`: {e}"))))
            .collect()
    }
}

struct CompiledFilters {
    models: Vec<glob::Pattern>,
    cases: Vec<glob::Pattern>,
    fault_modes: Vec<glob::Pattern>,
}

fn admits(patterns: &[glob::Pattern], candidates: &[&str]) -> bool {
    patterns.is_empty() || patterns.iter().any(|p| candidates.iter().any(|c| p.matches(c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cases_dir: PathBuf,
    pub trajectories_dir: PathBuf,
    pub output_dir: PathBuf,
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub consistency_mode: ConsistencyMode,
    #[serde(default)]
    pub consistency: ConsistencyRules,
    #[serde(default)]
    pub routing: VerifierRouting,
    #[serde(default)]
    pub strict_fault_mode: bool,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Reserved; nothing in the pipeline samples yet.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filters: Filters,
}

fn default_k() -> Vec<usize> {
    vec![1, 3]
}

fn default_concurrency() -> usize {
    4
}

impl RunConfig {
    pub fn new(cases_dir: impl Into<PathBuf>, trajectories_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        RunConfig {
            cases_dir: cases_dir.into(),
            trajectories_dir: trajectories_dir.into(),
            output_dir: output_dir.into(),
            backend,
            k_values: default_k(),
            ablations: Ablations::default(),
            consistency_mode: ConsistencyMode::default(),
            consistency: ConsistencyRules::default(),
            routing: VerifierRouting::default(),
            strict_fault_mode: false,
            averaging: Averaging::default(),
            concurrency: default_concurrency(),
            seed: 0,
            filters: Filters::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        for (name, dir) in [("cases", &self.cases_dir), ("trajectories", &self.trajectories_dir)] {
            if !dir.is_dir() {
                return Err(RunError::Config(format!("{name} directory {} does not exist", dir.display())));
            }
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(RunError::Config("k values must be positive".into()));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RunError::Config("k values must be strictly ascending".into()));
        }
        if self.concurrency == 0 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        self.backend.validate()?;
        Ok(())
    }

    pub fn judge_options(&self) -> JudgeOptions {
        JudgeOptions {
            ablate_retrieval: self.ablations.no_retrieval,
            unified_verifier: self.ablations.unified_verifier,
            routing: self.routing,
            consistency_mode: self.consistency_mode,
            consistency: self.consistency.clone(),
            strict_fault_mode: self.strict_fault_mode,
            display_concurrency: 0,
        }
    }

    /// Everything that can change a verdict. Paths and worker count are
    /// left out so the report only depends on the inputs.
    fn echo(&self) -> serde_json::Value {
        json!({
            "backend": {
                "kind": self.backend.kind,
                "model_name": self.backend.model_name,
                "max_retries": self.backend.max_retries,
            },
            "k_values": self.k_values,
            "ablations": self.ablations,
            "consistency_mode": self.consistency_mode,
            "routing": self.routing,
            "strict_fault_mode": self.strict_fault_mode,
            "filters": self.filters,
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A bundle that failed validation. Its runs are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub path: PathBuf,
    pub message: String,
}

impl ValidationFailure {
    fn new(path: &Path, message: impl Into<String>) -> Self {
        ValidationFailure {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    fn from_bundle(path: &Path, e: &BundleError) -> Self {
        ValidationFailure::new(path, e.to_string())
    }
}

/// A discovered run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLocation {
    pub model_id: String,
    pub case_id: String,
    pub task_id: String,
    pub run_index: u32,
    pub dir: PathBuf,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, RunError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn parse_run_index(name: &str) -> Option<u32> {
    name.strip_prefix("run_")?.parse().ok().filter(|n| *n >= 1)
}

/// Loads every `cases/<id>/case.json`. The directory name must equal the
/// case id.
pub fn load_cases(cases_dir: &Path) -> Result<(BTreeMap<String, EvaluationCase>, Vec<ValidationFailure>), RunError> {
    let mut cases = BTreeMap::new();
    let mut failures = Vec::new();
    for (name, dir) in sorted_subdirs(cases_dir)? {
        if !dir.join(CASE_FILE).is_file() {
            continue;
        }
        match validate_case(&dir) {
            Ok(case) if case.case_id != name => failures.push(ValidationFailure::new(
                &dir,
                format!("directory name `{name}` differs from case_id `{}`", case.case_id),
            )),
            Ok(case) => {
                cases.insert(name, case);
            }
            Err(e) => failures.push(ValidationFailure::from_bundle(&dir.join(CASE_FILE), &e)),
        }
    }
    Ok((cases, failures))
}

/// Walks `<model>/<case>/<task>/run_<n>/` below `trajectories_dir`.
pub fn discover_runs(trajectories_dir: &Path) -> Result<(Vec<RunLocation>, Vec<ValidationFailure>), RunError> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (model_id, model_dir) in sorted_subdirs(trajectories_dir)? {
        for (case_id, case_dir) in sorted_subdirs(&model_dir)? {
            for (task_id, task_dir) in sorted_subdirs(&case_dir)? {
                for (run_name, run_dir) in sorted_subdirs(&task_dir)? {
                    match parse_run_index(&run_name) {
                        Some(run_index) => runs.push(RunLocation {
                            model_id: model_id.clone(),
                            case_id: case_id.clone(),
                            task_id: task_id.clone(),
                            run_index,
                            dir: run_dir,
                        }),
                        None => failures.push(ValidationFailure::new(&run_dir, "run directory must be named run_<n> with n >= 1")),
                    }
                }
            }
        }
    }
    Ok((runs, failures))
}

struct Job {
    location: RunLocation,
    case: Arc<EvaluationCase>,
    trajectory: Trajectory,
}

fn check_location(loc: &RunLocation, traj: &Trajectory) -> Option<String> {
    if traj.model_id != loc.model_id {
        return Some(format!("model_id `{}` differs from directory `{}`", traj.model_id, loc.model_id));
    }
    if traj.task_id != loc.task_id {
        return Some(format!("task_id `{}` differs from directory `{}`", traj.task_id, loc.task_id));
    }
    None
}

/// Result of a batch run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: BenchmarkReport,
    pub outcomes: Vec<RunOutcome>,
    pub validation_failures: Vec<ValidationFailure>,
    pub unscored_runs: usize,
}

impl RunSummary {
    /// 0 on success, 2 on validation failures, 3 on unscored runs when
    /// `strict`.
    pub fn exit_code(&self, strict: bool) -> i32 {
        if !self.validation_failures.is_empty() {
            2
        } else if strict && self.unscored_runs > 0 {
            3
        } else {
            0
        }
    }
}

/// Validates, judges and aggregates without writing anything.
pub async fn evaluate(config: &RunConfig, backend: Arc<dyn JudgeBackend>) -> Result<RunSummary, RunError> {
    config.validate()?;
    let filters = CompiledFilters {
        models: Filters::compile(&config.filters.models)?,
        cases: Filters::compile(&config.filters.cases)?,
        fault_modes: Filters::compile(&config.filters.fault_modes)?,
    };

    let (cases, mut failures) = load_cases(&config.cases_dir)?;
    let cases: BTreeMap<String, Arc<EvaluationCase>> = cases
        .into_iter()
        .filter(|(id, c)| admits(&filters.cases, &[id]) && admits(&filters.fault_modes, &[c.fault_mode.short_code(), c.fault_mode.as_str()]))
        .map(|(id, c)| (id, Arc::new(c)))
        .collect();

    let (locations, discover_failures) = discover_runs(&config.trajectories_dir)?;
    failures.extend(discover_failures);
    if locations.is_empty() {
        tracing::warn!(dir = %config.trajectories_dir.display(), "no trajectories found");
    }

    let mut jobs = Vec::new();
    for loc in locations {
        if !admits(&filters.models, &[&loc.model_id]) || !admits(&filters.cases, &[&loc.case_id]) {
            continue;
        }
        let Some(case) = cases.get(&loc.case_id) else {
            if config.filters.cases.is_empty() && config.filters.fault_modes.is_empty() {
                failures.push(ValidationFailure::new(&loc.dir, format!("unknown case `{}`", loc.case_id)));
            }
            continue;
        };
        match validate_trajectory(&loc.dir, case) {
            Ok(trajectory) => match check_location(&loc, &trajectory) {
                Some(msg) => failures.push(ValidationFailure::new(&loc.dir.join(TRAJECTORY_FILE), msg)),
                None => jobs.push(Job {
                    location: loc,
                    case: Arc::clone(case),
                    trajectory,
                }),
            },
            Err(e) => failures.push(ValidationFailure::from_bundle(&loc.dir, &e)),
        }
    }
    for f in &failures {
        tracing::error!(path = %f.path.display(), "{}", f.message);
    }

    let options = Arc::new(config.judge_options());
    let mut outcomes: Vec<RunOutcome> = stream::iter(jobs)
        .map(|job| {
            let backend = Arc::clone(&backend);
            let options = Arc::clone(&options);
            async move {
                let loc = &job.location;
                let key = UnitKey::new(&loc.model_id, &loc.case_id, &loc.task_id);
                let task = job.case.task(&loc.task_id).expect("validated task");
                let mode: FaultMode = job.case.fault_mode;
                match judge_trajectory(&job.case, task, &job.trajectory, backend.as_ref(), &options).await {
                    Ok(verdict) => RunOutcome::scored(key, loc.run_index, mode, verdict, !job.trajectory.report.is_empty()),
                    Err(e) => {
                        tracing::warn!(run = %loc.dir.display(), "unscored: {e}");
                        RunOutcome::unscored(key, loc.run_index, mode, e.to_string())
                    }
                }
            }
        })
        .buffer_unordered(config.concurrency)
        .collect()
        .await;
    outcomes.sort_by_key(|o| (o.key(), o.run_index));

    let report_config = ReportConfig {
        k_values: config.k_values.clone(),
        averaging: config.averaging,
        not_evaluated: if config.ablations.no_retrieval {
            vec![Stage::Reach, Stage::Trigger]
        } else {
            Vec::new()
        },
        echo: config.echo(),
    };
    let report = aggregate_report(&outcomes, &report_config);
    let unscored_runs = report.unscored.runs;
    Ok(RunSummary {
        report,
        outcomes,
        validation_failures: failures,
        unscored_runs,
    })
}

/// Writes report.json, summary.csv, summary.md and verdicts.jsonl.
pub fn write_outputs(summary: &RunSummary, output_dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let write = |name: &str, body: String| {
        let path = output_dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))
    };
    write(REPORT_JSON, summary.report.to_json())?;
    write(SUMMARY_CSV, write_summary_csv(&summary.report))?;
    write(SUMMARY_MD, write_summary_md(&summary.report))?;
    let mut lines = String::new();
    for o in &summary.outcomes {
        lines.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        lines.push('\n');
    }
    write(VERDICTS_JSONL, lines)?;
    Ok(())
}

/// Full batch run: builds the backend, evaluates, writes the outputs.
pub async fn run_evaluation(config: &RunConfig) -> Result<RunSummary, RunError> {
    let backend = build_backend(&config.backend)?;
    let summary = evaluate(config, backend).await?;
    write_outputs(&summary, &config.output_dir)?;
    Ok(summary)
}

/// Validation pass used by `judge validate`.
pub fn validate_tree(cases_dir: &Path, trajectories_dir: Option<&Path>) -> Result<(usize, usize, Vec<ValidationFailure>), RunError> {
    let (cases, mut failures) = load_cases(cases_dir)?;
    let mut runs = 0;
    if let Some(tdir) = trajectories_dir {
        let (locations, more) = discover_runs(tdir)?;
        failures.extend(more);
        for loc in locations {
            let Some(case) = cases.get(&loc.case_id) else {
                failures.push(ValidationFailure::new(&loc.dir, format!("unknown case `{}`", loc.case_id)));
                continue;
            };
            match validate_trajectory(&loc.dir, case) {
                Ok(t) => match check_location(&loc, &t) {
                    Some(msg) => failures.push(ValidationFailure::new(&loc.dir.join(TRAJECTORY_FILE), msg)),
                    None => runs += 1,
                },
                Err(e) => failures.push(ValidationFailure::from_bundle(&loc.dir, &e)),
            }
        }
    }
    Ok((cases.len(), runs, failures))
}
