//! Loading and validation of case bundles (`cases/<case_id>/case.json`) and
//! trajectory bundles (`.../run_<n>/trajectory.json` plus `screenshots/`).
//!
//! Validation walks the raw JSON so that one pass reports every violation
//! instead of stopping at the first serde error.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    BasisRole, Claim, DefectReport, EvaluationCase, FaultMode, NavigationTask, Scenario, Step,
    TestBasis, Trajectory,
};

pub const CASE_FILE: &str = "case.json";
pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("missing or empty field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has the wrong type, expected {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("bad fault mode `{value}` at `{field}`")]
    BadFaultMode { field: String, value: String },
    #[error("case has no navigation tasks")]
    EmptyTasks,
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("step at position {position} has index {found}")]
    StepGap { position: usize, found: usize },
    #[error("step {step}: image `{path}` {problem}")]
    DanglingImage {
        step: usize,
        path: PathBuf,
        problem: &'static str,
    },
    #[error("claim {claim} refers to step {step}, trajectory has {len} steps")]
    ClaimOutOfRange { claim: usize, step: usize, len: usize },
    #[error("{field} `{found}` does not match `{expected}`")]
    CaseMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("report given both inline and in {REPORT_FILE}")]
    DuplicateReport,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {} violation(s): {}", violations.len(), join(violations))]
    Invalid {
        path: PathBuf,
        violations: Vec<Violation>,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl BundleError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            BundleError::Invalid { violations, .. } => violations,
            _ => &[],
        }
    }
}

fn read_json(path: &Path) -> Result<Value, BundleError> {
    let text = fs::read_to_string(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| BundleError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Field extraction that records violations instead of failing fast.
struct Fields<'a, 'o> {
    prefix: String,
    obj: Option<&'a Map<String, Value>>,
    out: &'o mut Vec<Violation>,
}

impl<'a, 'o> Fields<'a, 'o> {
    fn new(value: &'a Value, prefix: &str, out: &'o mut Vec<Violation>) -> Self {
        let obj = value.as_object();
        if obj.is_none() {
            out.push(Violation::WrongType {
                field: if prefix.is_empty() { "<root>".into() } else { prefix.into() },
                expected: "object",
            });
        }
        Fields {
            prefix: prefix.to_string(),
            obj,
            out,
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.prefix, key)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.obj.and_then(|o| o.get(key)).filter(|v| !v.is_null())
    }

    fn string(&mut self, key: &str, required: bool) -> String {
        match self.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() || !required => s.clone(),
            Some(Value::String(_)) => {
                self.out.push(Violation::MissingField(self.path(key)));
                String::new()
            }
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.path(key),
                    expected: "string",
                });
                String::new()
            }
            None => {
                if required {
                    self.out.push(Violation::MissingField(self.path(key)));
                }
                String::new()
            }
        }
    }

    fn opt_string(&mut self, key: &str) -> Option<String> {
        match self.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.path(key),
                    expected: "string",
                });
                None
            }
            None => None,
        }
    }

    fn bool(&mut self, key: &str) -> bool {
        match self.get(key) {
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.path(key),
                    expected: "boolean",
                });
                false
            }
            None => {
                self.out.push(Violation::MissingField(self.path(key)));
                false
            }
        }
    }

    fn ordinal(&mut self, key: &str) -> Option<usize> {
        match self.get(key) {
            Some(v) => match v.as_u64() {
                Some(n) => Some(n as usize),
                None => {
                    self.out.push(Violation::WrongType {
                        field: self.path(key),
                        expected: "non-negative integer",
                    });
                    None
                }
            },
            None => {
                self.out.push(Violation::MissingField(self.path(key)));
                None
            }
        }
    }

    fn fault_mode(&mut self, key: &str, required: bool) -> Option<FaultMode> {
        match self.get(key) {
            Some(Value::String(s)) => match s.parse() {
                Ok(m) => Some(m),
                Err(_) => {
                    self.out.push(Violation::BadFaultMode {
                        field: self.path(key),
                        value: s.clone(),
                    });
                    None
                }
            },
            Some(other) => {
                self.out.push(Violation::BadFaultMode {
                    field: self.path(key),
                    value: other.to_string(),
                });
                None
            }
            None => {
                if required {
                    self.out.push(Violation::MissingField(self.path(key)));
                }
                None
            }
        }
    }

    fn array(&mut self, key: &str, required: bool) -> &'a [Value] {
        match self.get(key) {
            Some(Value::Array(a)) => a,
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.path(key),
                    expected: "array",
                });
                &[]
            }
            None => {
                if required {
                    self.out.push(Violation::MissingField(self.path(key)));
                }
                &[]
            }
        }
    }

    fn strings(&mut self, key: &str) -> Vec<String> {
        let items = self.array(key, false);
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            match v.as_str() {
                Some(s) => out.push(s.to_string()),
                None => self.out.push(Violation::WrongType {
                    field: format!("{}[{i}]", self.path(key)),
                    expected: "string",
                }),
            }
        }
        out
    }
}

fn parse_basis(value: &Value, out: &mut Vec<Violation>) -> TestBasis {
    let mut f = Fields::new(value, "test_basis", out);
    let precondition = f.string("precondition", true);
    let trigger = f.string("trigger", false);
    let evidence = f.string("evidence", true);
    let deterministic_labels = match f.get("deterministic_labels") {
        None => None,
        Some(v) => match serde_json::from_value::<BTreeMap<BasisRole, String>>(v.clone()) {
            Ok(map) => Some(map),
            Err(_) => {
                f.out.push(Violation::WrongType {
                    field: f.path("deterministic_labels"),
                    expected: "map from precondition|trigger|evidence to marker",
                });
                None
            }
        },
    };
    TestBasis {
        precondition,
        trigger,
        evidence,
        deterministic_labels,
    }
}

/// Validates a parsed case manifest.
pub fn case_from_value(value: &Value) -> Result<EvaluationCase, Vec<Violation>> {
    let mut out = Vec::new();
    let mut f = Fields::new(value, "", &mut out);
    let case_id = f.string("case_id", true);
    let app_id = f.string("app_id", true);
    let app_category = f.string("app_category", true);
    let fault_mode = f.fault_mode("fault_mode", true);
    let defect_description = f.string("defect_description", true);
    let scenario_value = f.get("scenario");
    let basis_value = f.get("test_basis");
    let task_values = f.array("tasks", true);
    let tasks_present = f.get("tasks").is_some();

    let scenario = match scenario_value {
        Some(v) => {
            let mut s = Fields::new(v, "scenario", &mut out);
            Scenario {
                reset_notes: s.string("reset_notes", false),
                initial_conditions: s.strings("initial_conditions"),
            }
        }
        None => Scenario::default(),
    };

    let test_basis = match basis_value {
        Some(v) => parse_basis(v, &mut out),
        None => {
            out.push(Violation::MissingField("test_basis".into()));
            TestBasis {
                precondition: String::new(),
                trigger: String::new(),
                evidence: String::new(),
                deterministic_labels: None,
            }
        }
    };

    if tasks_present && task_values.is_empty() {
        out.push(Violation::EmptyTasks);
    }
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(task_values.len());
    for (i, tv) in task_values.iter().enumerate() {
        let mut t = Fields::new(tv, &format!("tasks[{i}]"), &mut out);
        let task = NavigationTask {
            task_id: t.string("task_id", true),
            instruction: t.string("instruction", true),
            entry_point: t.string("entry_point", false),
        };
        if !task.task_id.is_empty() && !seen.insert(task.task_id.clone()) {
            out.push(Violation::DuplicateTaskId(task.task_id.clone()));
        }
        tasks.push(task);
    }

    match (out.is_empty(), fault_mode) {
        (true, Some(fault_mode)) => Ok(EvaluationCase {
            case_id,
            app_id,
            app_category,
            fault_mode,
            defect_description,
            scenario,
            test_basis,
            tasks,
        }),
        _ => Err(out),
    }
}

/// Loads and validates `dir/case.json`.
pub fn validate_case(dir: &Path) -> Result<EvaluationCase, BundleError> {
    let path = dir.join(CASE_FILE);
    let value = read_json(&path)?;
    case_from_value(&value).map_err(|violations| BundleError::Invalid { path, violations })
}

fn parse_claims(items: &[Value], prefix: &str, out: &mut Vec<Violation>) -> Vec<Claim> {
    let mut claims = Vec::with_capacity(items.len());
    for (i, cv) in items.iter().enumerate() {
        let mut c = Fields::new(cv, &format!("{prefix}[{i}]"), out);
        let step = c.ordinal("step").unwrap_or(0);
        let claimed_fault_mode = c.fault_mode("claimed_fault_mode", false);
        let description = c.string("description", true);
        claims.push(Claim {
            step,
            claimed_fault_mode,
            description,
        });
    }
    claims
}

fn check_image(root: &Path, step: usize, rel: &Path, out: &mut Vec<Violation>) {
    if rel.as_os_str().is_empty() {
        return;
    }
    match fs::metadata(root.join(rel)) {
        Ok(meta) if meta.is_file() && meta.len() > 0 => {}
        Ok(meta) if meta.is_file() => out.push(Violation::DanglingImage {
            step,
            path: rel.to_path_buf(),
            problem: "is empty",
        }),
        Ok(_) => out.push(Violation::DanglingImage {
            step,
            path: rel.to_path_buf(),
            problem: "is not a file",
        }),
        Err(_) => out.push(Violation::DanglingImage {
            step,
            path: rel.to_path_buf(),
            problem: "does not exist",
        }),
    }
}

/// Validates a parsed trajectory against its case. `root` resolves image
/// paths; `external_report` is the content of a sibling report file.
pub fn trajectory_from_value(
    value: &Value,
    external_report: Option<&Value>,
    root: &Path,
    case: &EvaluationCase,
) -> Result<Trajectory, Vec<Violation>> {
    let mut out = Vec::new();
    let mut f = Fields::new(value, "", &mut out);
    let run_id = f.string("run_id", true);
    let model_id = f.string("model_id", true);
    let case_id = f.string("case_id", true);
    let task_id = f.string("task_id", true);
    let step_values = f.array("steps", true);
    let inline_report = f.get("report");

    let mut steps = Vec::with_capacity(step_values.len());
    for (pos, sv) in step_values.iter().enumerate() {
        let mut s = Fields::new(sv, &format!("steps[{pos}]"), &mut out);
        let index = s.ordinal("index");
        let step = Step {
            index: index.unwrap_or(0),
            thought: s.string("thought", false),
            action: s.string("action", true),
            target: s.string("target", false),
            hit: s.bool("hit"),
            pre_image: PathBuf::from(s.string("pre_image", true)),
            post_image: PathBuf::from(s.string("post_image", true)),
            pre_text: s.opt_string("pre_text"),
            post_text: s.opt_string("post_text"),
        };
        if let Some(found) = index {
            if found != pos + 1 {
                out.push(Violation::StepGap {
                    position: pos + 1,
                    found,
                });
            }
        }
        check_image(root, pos + 1, &step.pre_image, &mut out);
        check_image(root, pos + 1, &step.post_image, &mut out);
        steps.push(step);
    }

    let report_value = match (inline_report, external_report) {
        (Some(_), Some(_)) => {
            out.push(Violation::DuplicateReport);
            None
        }
        (Some(v), None) | (None, Some(v)) => Some(v),
        (None, None) => None,
    };
    let report = match report_value {
        Some(v) => {
            let mut r = Fields::new(v, "report", &mut out);
            let items = r.array("claims", false);
            DefectReport {
                claims: parse_claims(items, "report.claims", &mut out),
            }
        }
        None => DefectReport::default(),
    };
    for (i, claim) in report.claims.iter().enumerate() {
        if claim.step == 0 || claim.step > steps.len() {
            out.push(Violation::ClaimOutOfRange {
                claim: i + 1,
                step: claim.step,
                len: steps.len(),
            });
        }
    }

    if !case_id.is_empty() && case_id != case.case_id {
        out.push(Violation::CaseMismatch {
            field: "case_id",
            expected: case.case_id.clone(),
            found: case_id.clone(),
        });
    }
    if !task_id.is_empty() && case.task(&task_id).is_none() {
        out.push(Violation::CaseMismatch {
            field: "task_id",
            expected: case
                .tasks
                .iter()
                .map(|t| t.task_id.as_str())
                .collect::<Vec<_>>()
                .join("|"),
            found: task_id.clone(),
        });
    }

    if !out.is_empty() {
        return Err(out);
    }
    Ok(Trajectory {
        run_id,
        model_id,
        case_id,
        task_id,
        steps,
        report,
        root: root.to_path_buf(),
    })
}

/// Loads and validates a run directory: `trajectory.json`, an optional
/// `report.json`, and every referenced screenshot.
pub fn validate_trajectory(dir: &Path, case: &EvaluationCase) -> Result<Trajectory, BundleError> {
    let path = dir.join(TRAJECTORY_FILE);
    let value = read_json(&path)?;
    let report_path = dir.join(REPORT_FILE);
    let report = if report_path.is_file() {
        Some(read_json(&report_path)?)
    } else {
        None
    };
    trajectory_from_value(&value, report.as_ref(), dir, case)
        .map_err(|violations| BundleError::Invalid { path, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn case_json() -> Value {
        json!({
            "case_id": "tasks-search-onr",
            "app_id": "org.tasks",
            "app_category": "productivity",
            "fault_mode": "ID.OperationNoResponse",
            "defect_description": "keyboard search does not filter the list",
            "scenario": {"reset_notes": "fresh install", "initial_conditions": ["5 tasks"]},
            "test_basis": {
                "precondition": "search field open",
                "trigger": "query submitted",
                "evidence": "list after submitting a query"
            },
            "tasks": [
                {"task_id": "t1", "instruction": "search Exercise", "entry_point": "toolbar"},
                {"task_id": "t2", "instruction": "filter by Exercise", "entry_point": "menu"}
            ]
        })
    }

    #[test]
    fn valid_case_is_interaction_class() {
        let case = case_from_value(&case_json()).unwrap();
        assert_eq!(case.fault_mode, FaultMode::OperationNoResponse);
        assert_eq!(case.defect_class(), crate::model::DefectClass::Interaction);
        assert_eq!(case.tasks.len(), 2);
    }

    #[test]
    fn zero_tasks_is_empty_tasks() {
        let mut v = case_json();
        v["tasks"] = json!([]);
        assert_eq!(case_from_value(&v).unwrap_err(), vec![Violation::EmptyTasks]);
    }

    #[test]
    fn unknown_fault_mode_rejected() {
        let mut v = case_json();
        v["fault_mode"] = json!("DD.Overlap");
        let errs = case_from_value(&v).unwrap_err();
        assert!(matches!(&errs[..], [Violation::BadFaultMode { value, .. }] if value == "DD.Overlap"));
    }

    #[test]
    fn every_violation_is_listed() {
        let mut v = case_json();
        v.as_object_mut().unwrap().remove("app_id");
        v["test_basis"]["evidence"] = json!("");
        v["tasks"][1]["task_id"] = json!("t1");
        v["fault_mode"] = json!("ID.operationnoresponse");
        let errs = case_from_value(&v).unwrap_err();
        assert!(errs.contains(&Violation::MissingField("app_id".into())));
        assert!(errs.contains(&Violation::MissingField("test_basis.evidence".into())));
        assert!(errs.contains(&Violation::DuplicateTaskId("t1".into())));
        assert!(errs
            .iter()
            .any(|e| matches!(e, Violation::BadFaultMode { .. })));
        assert_eq!(errs.len(), 4);
    }

    #[test]
    fn empty_trigger_description_allowed() {
        let mut v = case_json();
        v["test_basis"]["trigger"] = json!("");
        assert!(case_from_value(&v).is_ok());
    }

    fn traj_json(indices: &[usize]) -> Value {
        let steps: Vec<Value> = indices
            .iter()
            .map(|i| {
                json!({"index": i, "action": "tap", "hit": true,
                       "pre_image": "shot.png", "post_image": "shot.png"})
            })
            .collect();
        json!({"run_id": "run_1", "model_id": "m", "case_id": "tasks-search-onr",
               "task_id": "t1", "steps": steps})
    }

    fn root() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("shot.png"), b"\x89PNG").unwrap();
        dir
    }

    #[test]
    fn missing_image_fields_reported_per_step() {
        let case = case_from_value(&case_json()).unwrap();
        let mut v = traj_json(&[1, 2, 3, 4, 5]);
        for s in v["steps"].as_array_mut().unwrap() {
            s.as_object_mut().unwrap().remove("pre_image");
        }
        let errs = trajectory_from_value(&v, None, root().path(), &case).unwrap_err();
        assert_eq!(errs.len(), 5);
        assert!(errs
            .iter()
            .all(|e| matches!(e, Violation::MissingField(f) if f.ends_with("pre_image"))));
    }

    #[test]
    fn claim_out_of_range_and_dangling_image() {
        let case = case_from_value(&case_json()).unwrap();
        let dir = root();
        let mut v = traj_json(&[1, 2, 3, 4, 5]);
        v["steps"][2]["post_image"] = json!("screenshots/missing.png");
        let report = json!({"claims": [{"step": 9, "description": "search did nothing"}]});
        let errs = trajectory_from_value(&v, Some(&report), dir.path(), &case).unwrap_err();
        assert_eq!(
            errs,
            vec![
                Violation::DanglingImage {
                    step: 3,
                    path: PathBuf::from("screenshots/missing.png"),
                    problem: "does not exist"
                },
                Violation::ClaimOutOfRange {
                    claim: 1,
                    step: 9,
                    len: 5
                }
            ]
        );
    }

    #[test]
    fn no_report_normalizes_to_empty_claims() {
        let case = case_from_value(&case_json()).unwrap();
        let dir = root();
        let t = trajectory_from_value(&traj_json(&[1, 2, 3, 4, 5]), None, dir.path(), &case)
            .unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.report.is_empty());
    }

    #[test]
    fn inline_and_file_report_conflict() {
        let case = case_from_value(&case_json()).unwrap();
        let dir = root();
        let mut v = traj_json(&[1]);
        v["report"] = json!({"claims": []});
        let errs = trajectory_from_value(&v, Some(&json!({"claims": []})), dir.path(), &case)
            .unwrap_err();
        assert_eq!(errs, vec![Violation::DuplicateReport]);
    }

    #[test]
    fn step_gap_detected() {
        let case = case_from_value(&case_json()).unwrap();
        let errs = trajectory_from_value(&traj_json(&[1, 2, 4]), None, root().path(), &case)
            .unwrap_err();
        assert!(errs.contains(&Violation::StepGap {
            position: 3,
            found: 4
        }));
    }

    #[test]
    fn case_and_task_mismatch() {
        let case = case_from_value(&case_json()).unwrap();
        let mut v = traj_json(&[1]);
        v["case_id"] = json!("other");
        v["task_id"] = json!("t9");
        let errs = trajectory_from_value(&v, None, root().path(), &case).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs
            .iter()
            .all(|e| matches!(e, Violation::CaseMismatch { .. })));
    }
}
