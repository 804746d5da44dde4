mod common;

use std::fs;
use std::path::Path;

use common::{golden_config, golden_dir, schemas_dir};
use judge_core::backend::build_backend;
use judge_core::metrics::{BenchmarkReport, CellStatus, Column, ConfusionCounts, Stage};
use judge_core::runner::{evaluate, run_evaluation, REPORT_JSON};
use serde_json::{json, Value};

const TOL: f64 = 1e-12;

fn load_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn expected_report() -> String {
    fs::read_to_string(golden_dir().join("expected").join(REPORT_JSON)).unwrap()
}

/// Per-fault-mode counts worked out by hand from the fixture run plan.
/// Three units per mode; pooled columns multiply by the member count.
fn hand_walk(k: usize, stage: Stage, ablated: bool) -> Option<(u64, u64, u64, f64, f64, f64)> {
    match (ablated, k, stage) {
        (true, _, Stage::Reach | Stage::Trigger) => None,
        (false, 1, Stage::Reach | Stage::Trigger) => Some((2, 0, 1, 2.0 / 3.0, 1.0, 0.8)),
        (false, 1, Stage::Detect) => Some((1, 1, 2, 1.0 / 3.0, 0.5, 0.4)),
        (false, 3, Stage::Reach | Stage::Trigger) => Some((3, 0, 0, 1.0, 1.0, 1.0)),
        (false, 3, Stage::Detect) => Some((2, 1, 1, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)),
        (true, 1, Stage::Detect) => Some((2, 0, 1, 2.0 / 3.0, 1.0, 0.8)),
        (true, 3, Stage::Detect) => Some((2, 1, 1, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)),
        _ => unreachable!(),
    }
}

fn assert_hand_walk(report: &BenchmarkReport, ablated: bool) {
    let model = report.model("agent-a").expect("agent-a table");
    for k in [1, 3] {
        let table = model.table(k).unwrap();
        for column in Column::ALL {
            let n = column.members().len() as u64;
            for stage in Stage::ALL {
                let cell = table.cell(column, stage).unwrap();
                let ctx = format!("k={k} {column:?} {stage:?}");
                match hand_walk(k, stage, ablated) {
                    None => {
                        assert_eq!(cell.status, CellStatus::NotEvaluated, "{ctx}");
                        assert!(cell.recall.is_none(), "{ctx}");
                    }
                    Some((tp, fp, fn_, r, p, f)) => {
                        assert_eq!(cell.status, CellStatus::Evaluated, "{ctx}");
                        assert_eq!(cell.counts, ConfusionCounts::new(tp * n, fp * n, fn_ * n), "{ctx}");
                        assert!((cell.recall.unwrap() - r).abs() < TOL, "{ctx}");
                        assert!((cell.precision.unwrap() - p).abs() < TOL, "{ctx}");
                        assert!((cell.f1.unwrap() - f).abs() < TOL, "{ctx}");
                    }
                }
            }
        }
    }
}

#[tokio::test]
async fn golden_report_is_reproduced_byte_for_byte() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_evaluation(&golden_config(out.path())).await.unwrap();
    assert!(summary.validation_failures.is_empty(), "{:?}", summary.validation_failures);
    assert_eq!(summary.outcomes.len(), 45);
    assert_eq!(summary.unscored_runs, 0);
    let produced = fs::read_to_string(out.path().join(REPORT_JSON)).unwrap();
    assert_eq!(produced, expected_report());
}

#[tokio::test]
async fn golden_cells_match_hand_walk() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_config(out.path());
    let summary = evaluate(&config, build_backend(&config.backend).unwrap()).await.unwrap();
    assert_hand_walk(&summary.report, false);
    // the frozen file agrees as well
    let frozen: BenchmarkReport = serde_json::from_str(&expected_report()).unwrap();
    assert_hand_walk(&frozen, false);
}

#[tokio::test]
async fn display_trigger_equals_reach_in_golden() {
    let frozen: BenchmarkReport = serde_json::from_str(&expected_report()).unwrap();
    for t in &frozen.model("agent-a").unwrap().tables {
        for col in [Column::Cr, Column::El, Column::DisplayOverall] {
            let (a, b) = (t.cell(col, Stage::Trigger).unwrap(), t.cell(col, Stage::Reach).unwrap());
            assert_eq!((a.counts, a.recall, a.f1), (b.counts, b.recall, b.f1));
        }
    }
    for u in &frozen.units {
        if u.fault_mode.defect_class() == judge_core::model::DefectClass::Display {
            assert!(u.pass.iter().all(|p| p.trigger == p.reach));
        }
    }
}

#[tokio::test]
async fn retrieval_ablation_cells() {
    let out = tempfile::tempdir().unwrap();
    let mut config = golden_config(out.path());
    config.ablations.no_retrieval = true;
    let summary = evaluate(&config, build_backend(&config.backend).unwrap()).await.unwrap();
    assert_hand_walk(&summary.report, true);
    assert_eq!(summary.report.config.not_evaluated, vec![Stage::Reach, Stage::Trigger]);
}

#[tokio::test]
async fn unified_verifier_ablation_runs() {
    let out = tempfile::tempdir().unwrap();
    let mut config = golden_config(out.path());
    config.ablations.unified_verifier = true;
    let summary = evaluate(&config, build_backend(&config.backend).unwrap()).await.unwrap();
    assert_eq!(summary.unscored_runs, 0);
    assert_hand_walk(&summary.report, false);
    assert_eq!(summary.report.config.echo["ablations"]["unified_verifier"], json!(true));
}

#[tokio::test]
async fn report_is_independent_of_concurrency() {
    let mut seen = Vec::new();
    for concurrency in [1, 4, 16, 16] {
        let out = tempfile::tempdir().unwrap();
        let mut config = golden_config(out.path());
        config.concurrency = concurrency;
        run_evaluation(&config).await.unwrap();
        let files: Vec<Vec<u8>> = ["report.json", "summary.csv", "summary.md", "verdicts.jsonl"]
            .iter()
            .map(|f| fs::read(out.path().join(f)).unwrap())
            .collect();
        seen.push(files);
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn filters_restrict_units() {
    let out = tempfile::tempdir().unwrap();
    let mut config = golden_config(out.path());
    config.filters.fault_modes = vec!["ONR".into()];
    let summary = evaluate(&config, build_backend(&config.backend).unwrap()).await.unwrap();
    assert!(summary.validation_failures.is_empty());
    assert_eq!(summary.report.units.len(), 3);
    let t = summary.report.model("agent-a").unwrap().table(1).unwrap();
    assert_eq!(t.cell(Column::Cr, Stage::Reach).unwrap().status, CellStatus::Empty);
    assert_eq!(t.cell(Column::Onr, Stage::Reach).unwrap().counts, ConfusionCounts::new(2, 0, 1));
}

fn validator(name: &str) -> jsonschema::Validator {
    jsonschema::validator_for(&load_json(&schemas_dir().join(name))).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &Path) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", what.display());
}

#[test]
fn golden_files_conform_to_schemas() {
    let case_v = validator("case.schema.json");
    let traj_schema = load_json(&schemas_dir().join("trajectory.schema.json"));
    let traj_v = jsonschema::validator_for(&traj_schema).unwrap();
    let report_only = json!({ "$defs": traj_schema["$defs"], "$ref": "#/$defs/report" });
    let sidecar_v = jsonschema::validator_for(&report_only).unwrap();
    let (mut cases, mut trajectories, mut sidecars) = (0, 0, 0);
    for entry in walk(&golden_dir()) {
        let name = entry.file_name().unwrap().to_str().unwrap();
        match name {
            "case.json" => {
                assert_valid(&case_v, &load_json(&entry), &entry);
                cases += 1;
            }
            "trajectory.json" => {
                assert_valid(&traj_v, &load_json(&entry), &entry);
                trajectories += 1;
            }
            "report.json" if !entry.ends_with("expected/report.json") => {
                assert_valid(&sidecar_v, &load_json(&entry), &entry);
                sidecars += 1;
            }
            _ => {}
        }
    }
    assert_eq!((cases, trajectories), (5, 45));
    assert!(sidecars > 0);
    let report_path = golden_dir().join("expected").join(REPORT_JSON);
    assert_valid(&validator("report.schema.json"), &load_json(&report_path), &report_path);
}

#[test]
fn schemas_reject_bad_documents() {
    let case_v = validator("case.schema.json");
    let mut doc = load_json(&golden_dir().join("cases/cr-recipe-tofu/case.json"));
    doc["fault_mode"] = json!("DF.Sparkle");
    assert!(!case_v.is_valid(&doc));
    let traj_v = validator("trajectory.schema.json");
    let mut t = load_json(&golden_dir().join("trajectories/agent-a/cr-recipe-tofu/t1/run_1/trajectory.json"));
    t["steps"][0]["index"] = json!(0);
    assert!(!traj_v.is_valid(&t));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}
