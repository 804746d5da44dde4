//! Stage-wise Recall/F1 under Pass@k.
//!
//! A unit is one (model, case, task). Its repeated runs collapse into one
//! success flag per stage; units then pool into per-fault-mode cells and the
//! display / interaction / overall aggregates.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DefectClass, FaultMode, Verdict};

/// One judged (or unjudgeable) run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub model_id: String,
    pub case_id: String,
    pub task_id: String,
    pub run_index: u32,
    pub fault_mode: FaultMode,
    pub scored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// The agent's report held at least one claim.
    #[serde(default)]
    pub claimed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn scored(key: UnitKey, run_index: u32, fault_mode: FaultMode, verdict: Verdict, claimed: bool) -> Self {
        RunOutcome {
            model_id: key.model_id,
            case_id: key.case_id,
            task_id: key.task_id,
            run_index: run_index.max(1),
            fault_mode,
            scored: true,
            verdict: Some(verdict),
            claimed,
            error: None,
        }
    }

    pub fn unscored(key: UnitKey, run_index: u32, fault_mode: FaultMode, error: impl Into<String>) -> Self {
        RunOutcome {
            model_id: key.model_id,
            case_id: key.case_id,
            task_id: key.task_id,
            run_index: run_index.max(1),
            fault_mode,
            scored: false,
            verdict: None,
            claimed: false,
            error: Some(error.into()),
        }
    }

    pub fn key(&self) -> UnitKey {
        UnitKey {
            model_id: self.model_id.clone(),
            case_id: self.case_id.clone(),
            task_id: self.task_id.clone(),
        }
    }

    /// A claim was raised that no verified defect supported.
    pub fn unsupported_claim(&self) -> bool {
        self.claimed && self.verdict.as_ref().is_some_and(|v| !v.detect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub model_id: String,
    pub case_id: String,
    pub task_id: String,
}

impl UnitKey {
    pub fn new(model_id: &str, case_id: &str, task_id: &str) -> Self {
        UnitKey {
            model_id: model_id.into(),
            case_id: case_id.into(),
            task_id: task_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Reach,
    Trigger,
    Detect,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Reach, Stage::Trigger, Stage::Detect];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Reach => "reach",
            Stage::Trigger => "trigger",
            Stage::Detect => "detect",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub unit: UnitKey,
    pub fault_mode: FaultMode,
    pub stage: Stage,
    pub success: bool,
    pub false_report: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unit {model_id}/{case_id}/{task_id} has no scored runs")]
pub struct NoScoredRuns {
    pub model_id: String,
    pub case_id: String,
    pub task_id: String,
}

/// Collapses one unit's runs at one stage: success if any of the first `k`
/// scored runs (by run index) succeeds. Display-class Trigger follows Reach.
/// `false_report` is only ever set at the Detect stage.
pub fn collapse_pass_at_k(runs: &[RunOutcome], k: usize, stage: Stage) -> Result<StageOutcome, NoScoredRuns> {
    let mut scored: Vec<&RunOutcome> = runs.iter().filter(|r| r.scored && r.verdict.is_some()).collect();
    let Some(first) = scored.first().copied().or(runs.first()) else {
        return Err(NoScoredRuns {
            model_id: String::new(),
            case_id: String::new(),
            task_id: String::new(),
        });
    };
    if scored.is_empty() {
        return Err(NoScoredRuns {
            model_id: first.model_id.clone(),
            case_id: first.case_id.clone(),
            task_id: first.task_id.clone(),
        });
    }
    scored.sort_by_key(|r| r.run_index);
    scored.truncate(k.max(1));

    let verdict = |r: &RunOutcome| r.verdict.clone().expect("scored runs carry a verdict");
    let passes = |r: &&RunOutcome| {
        let v = verdict(r);
        match stage {
            Stage::Reach => v.reach(),
            Stage::Trigger => match v.class() {
                DefectClass::Display => v.reach(),
                DefectClass::Interaction => v.trigger().is_triggered(),
            },
            Stage::Detect => v.detect(),
        }
    };
    let success = scored.iter().any(passes);
    let false_report = stage == Stage::Detect && !success && scored.iter().any(|r| r.unsupported_claim());
    Ok(StageOutcome {
        unit: first.key(),
        fault_mode: first.fault_mode,
        stage,
        success,
        false_report,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, fn_ }
    }

    pub fn units(&self) -> u64 {
        self.tp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

/// Per (stage, fault mode) counts over collapsed outcomes.
pub fn confusion(outcomes: &[StageOutcome]) -> BTreeMap<(Stage, FaultMode), ConfusionCounts> {
    let mut cells: BTreeMap<(Stage, FaultMode), ConfusionCounts> = BTreeMap::new();
    for o in outcomes {
        let c = cells.entry((o.stage, o.fault_mode)).or_default();
        if o.success {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
        if o.stage == Stage::Detect && o.false_report {
            c.fp += 1;
        }
    }
    cells
}

/// Recall, precision and F1. Zero denominators give zero and set a flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores<T> {
    pub recall: T,
    pub precision: T,
    pub f1: T,
    /// No units in the cell.
    pub empty: bool,
    /// tp + fp was zero with units present.
    pub degenerate: bool,
}

pub fn recall_f1<T: Float>(counts: ConfusionCounts) -> Scores<T> {
    let cast = |n: u64| T::from(n).expect("count fits the scalar type");
    let ratio = |num: u64, den: u64| if den == 0 { T::zero() } else { cast(num) / cast(den) };
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let sum = precision + recall;
    let f1 = if sum == T::zero() {
        T::zero()
    } else {
        (T::one() + T::one()) * precision * recall / sum
    };
    Scores {
        recall,
        precision,
        f1,
        empty: counts.units() == 0,
        degenerate: counts.units() > 0 && counts.tp + counts.fp == 0,
    }
}

/// Report columns, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "EL")]
    El,
    #[serde(rename = "NLE")]
    Nle,
    #[serde(rename = "ONR")]
    Onr,
    #[serde(rename = "UTR")]
    Utr,
    #[serde(rename = "display_overall")]
    DisplayOverall,
    #[serde(rename = "interaction_overall")]
    InteractionOverall,
    #[serde(rename = "overall")]
    Overall,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Column::Cr,
        Column::El,
        Column::Nle,
        Column::Onr,
        Column::Utr,
        Column::DisplayOverall,
        Column::InteractionOverall,
        Column::Overall,
    ];

    pub fn of(mode: FaultMode) -> Column {
        match mode {
            FaultMode::ContentRendering => Column::Cr,
            FaultMode::ElementLayout => Column::El,
            FaultMode::NavigationLogicError => Column::Nle,
            FaultMode::OperationNoResponse => Column::Onr,
            FaultMode::UnexpectedTaskResult => Column::Utr,
        }
    }

    /// Fault modes pooled into this column.
    pub fn members(self) -> Vec<FaultMode> {
        match self {
            Column::DisplayOverall => FaultMode::of_class(DefectClass::Display).collect(),
            Column::InteractionOverall => FaultMode::of_class(DefectClass::Interaction).collect(),
            Column::Overall => FaultMode::ALL.to_vec(),
            single => FaultMode::ALL.into_iter().filter(|m| Column::of(*m) == single).collect(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Column::Cr => "CR",
            Column::El => "EL",
            Column::Nle => "NLE",
            Column::Onr => "ONR",
            Column::Utr => "UTR",
            Column::DisplayOverall => "display_overall",
            Column::InteractionOverall => "interaction_overall",
            Column::Overall => "overall",
        }
    }

    fn is_aggregate(self) -> bool {
        matches!(self, Column::DisplayOverall | Column::InteractionOverall | Column::Overall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Aggregate cells pool counts.
    #[default]
    Micro,
    /// Aggregate cells average the scores of their non-empty member cells.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Evaluated,
    Empty,
    NotEvaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub column: Column,
    pub stage: Stage,
    pub status: CellStatus,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_denominator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassTable {
    pub k: usize,
    pub cells: Vec<Cell>,
}

impl PassTable {
    pub fn cell(&self, column: Column, stage: Stage) -> Option<&Cell> {
        self.cells.iter().find(|c| c.column == column && c.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTable {
    pub model_id: String,
    pub tables: Vec<PassTable>,
}

impl ModelTable {
    pub fn table(&self, k: usize) -> Option<&PassTable> {
        self.tables.iter().find(|t| t.k == k)
    }
}

/// Per-unit collapsed flags for one k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitPass {
    pub k: usize,
    pub reach: bool,
    pub trigger: bool,
    pub detect: bool,
    pub false_report: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSummary {
    #[serde(flatten)]
    pub unit: UnitKey,
    pub fault_mode: FaultMode,
    pub scored_runs: usize,
    pub unscored_runs: usize,
    pub pass: Vec<UnitPass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnscoredRun {
    #[serde(flatten)]
    pub unit: UnitKey,
    pub run_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnscoredTally {
    pub runs: usize,
    /// Units with no scored run at all, excluded from every cell.
    pub units: usize,
    pub entries: Vec<UnscoredRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub averaging: Averaging,
    /// Stages reported as not evaluated (e.g. under the retrieval ablation).
    #[serde(default)]
    pub not_evaluated: Vec<Stage>,
    /// Free-form echo of the run configuration.
    #[serde(default)]
    pub echo: serde_json::Value,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            k_values: vec![1, 3],
            averaging: Averaging::Micro,
            not_evaluated: Vec::new(),
            echo: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub config: ReportConfig,
    pub models: Vec<ModelTable>,
    pub units: Vec<UnitSummary>,
    pub unscored: UnscoredTally,
}

impl BenchmarkReport {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn model(&self, model_id: &str) -> Option<&ModelTable> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    /// Canonical serialized form: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn build_cell(column: Column, stage: Stage, counts: &BTreeMap<(Stage, FaultMode), ConfusionCounts>, config: &ReportConfig) -> Cell {
    let members = column.members();
    let pooled: ConfusionCounts = members
        .iter()
        .map(|m| counts.get(&(stage, *m)).copied().unwrap_or_default())
        .sum();
    if config.not_evaluated.contains(&stage) {
        return Cell {
            column,
            stage,
            status: CellStatus::NotEvaluated,
            counts: pooled,
            recall: None,
            precision: None,
            f1: None,
            zero_denominator: false,
        };
    }
    let scores: Scores<f64> = if column.is_aggregate() && config.averaging == Averaging::Macro {
        let parts: Vec<Scores<f64>> = members
            .iter()
            .map(|m| recall_f1::<f64>(counts.get(&(stage, *m)).copied().unwrap_or_default()))
            .filter(|s| !s.empty)
            .collect();
        let n = parts.len() as f64;
        let mean = |f: fn(&Scores<f64>) -> f64| if parts.is_empty() { 0.0 } else { parts.iter().map(f).sum::<f64>() / n };
        Scores {
            recall: mean(|s| s.recall),
            precision: mean(|s| s.precision),
            f1: mean(|s| s.f1),
            empty: parts.is_empty(),
            degenerate: parts.iter().any(|s| s.degenerate),
        }
    } else {
        recall_f1(pooled)
    };
    Cell {
        column,
        stage,
        status: if scores.empty { CellStatus::Empty } else { CellStatus::Evaluated },
        counts: pooled,
        recall: Some(scores.recall),
        precision: Some(scores.precision),
        f1: Some(scores.f1),
        zero_denominator: scores.empty || scores.degenerate,
    }
}

/// Builds the full report. Output order is canonical regardless of input
/// order.
pub fn aggregate_report(outcomes: &[RunOutcome], config: &ReportConfig) -> BenchmarkReport {
    let mut config = config.clone();
    config.k_values.sort_unstable();
    config.k_values.dedup();
    config.not_evaluated.sort();
    config.not_evaluated.dedup();

    let mut by_unit: BTreeMap<UnitKey, Vec<RunOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_unit.entry(o.key()).or_default().push(o.clone());
    }

    let mut unscored = UnscoredTally::default();
    let mut units = Vec::new();
    // model -> k -> collapsed outcomes
    let mut collapsed: BTreeMap<String, BTreeMap<usize, Vec<StageOutcome>>> = BTreeMap::new();

    for (key, mut runs) in by_unit {
        runs.sort_by_key(|r| r.run_index);
        for r in runs.iter().filter(|r| !r.scored) {
            unscored.runs += 1;
            unscored.entries.push(UnscoredRun {
                unit: key.clone(),
                run_index: r.run_index,
                reason: r.error.clone().unwrap_or_default(),
            });
        }
        let scored_runs = runs.iter().filter(|r| r.scored).count();
        let per_model = collapsed.entry(key.model_id.clone()).or_default();
        let mut pass = Vec::new();
        for &k in &config.k_values {
            let stages: Result<Vec<StageOutcome>, NoScoredRuns> =
                Stage::ALL.iter().map(|s| collapse_pass_at_k(&runs, k, *s)).collect();
            let Ok(stages) = stages else { break };
            pass.push(UnitPass {
                k,
                reach: stages[0].success,
                trigger: stages[1].success,
                detect: stages[2].success,
                false_report: stages[2].false_report,
            });
            per_model.entry(k).or_default().extend(stages);
        }
        if scored_runs == 0 {
            unscored.units += 1;
        }
        units.push(UnitSummary {
            fault_mode: runs[0].fault_mode,
            unit: key,
            scored_runs,
            unscored_runs: runs.len() - scored_runs,
            pass,
        });
    }

    let models = collapsed
        .into_iter()
        .map(|(model_id, per_k)| ModelTable {
            model_id,
            tables: config
                .k_values
                .iter()
                .map(|k| {
                    let counts = confusion(per_k.get(k).map(Vec::as_slice).unwrap_or(&[]));
                    PassTable {
                        k: *k,
                        cells: Column::ALL
                            .iter()
                            .flat_map(|c| Stage::ALL.iter().map(move |s| (*c, *s)))
                            .map(|(c, s)| build_cell(c, s, &counts, &config))
                            .collect(),
                    }
                })
                .collect(),
        })
        .collect();

    BenchmarkReport {
        format_version: BenchmarkReport::FORMAT_VERSION,
        config,
        models,
        units,
        unscored,
    }
}

fn fmt_score(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per (model, k, column, stage).
pub fn write_summary_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("model,k,column,stage,status,tp,fp,fn,recall,precision,f1\n");
    for m in &report.models {
        for t in &m.tables {
            for c in &t.cells {
                let status = match c.status {
                    CellStatus::Evaluated => "evaluated",
                    CellStatus::Empty => "empty",
                    CellStatus::NotEvaluated => "not_evaluated",
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&m.model_id),
                    t.k,
                    c.column.label(),
                    c.stage,
                    status,
                    c.counts.tp,
                    c.counts.fp,
                    c.counts.fn_,
                    fmt_score(c.recall),
                    fmt_score(c.precision),
                    fmt_score(c.f1),
                );
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pct(cell: &Cell, pick: fn(&Cell) -> Option<f64>) -> String {
    match cell.status {
        CellStatus::NotEvaluated => "n/e".into(),
        CellStatus::Empty => "-".into(),
        CellStatus::Evaluated => pick(cell).map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default(),
    }
}

/// Markdown tables, one per (model, k), scores in percent.
pub fn write_summary_md(report: &BenchmarkReport) -> String {
    let mut out = String::from("# Stage-wise results\n");
    let averaging = match report.config.averaging {
        Averaging::Micro => "micro",
        Averaging::Macro => "macro",
    };
    let _ = writeln!(out, "\nAggregate columns use {averaging} averaging. `n/e` = not evaluated, `-` = no units.");
    for m in &report.models {
        for t in &m.tables {
            let _ = writeln!(out, "\n## {} (Pass@{})\n", m.model_id, t.k);
            out.push_str("| Column | Reach R | Reach F1 | Trigger R | Trigger F1 | Detect R | Detect F1 |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
            for col in Column::ALL {
                let _ = write!(out, "| {} |", col.label());
                for stage in Stage::ALL {
                    let cell = t.cell(col, stage).expect("full layout");
                    let _ = write!(out, " {} | {} |", pct(cell, |c| c.recall), pct(cell, |c| c.f1));
                }
                out.push('\n');
            }
        }
    }
    if report.unscored.runs > 0 {
        let _ = writeln!(
            out,
            "\nUnscored: {} run(s), {} unit(s) excluded.",
            report.unscored.runs, report.unscored.units
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Segment, Trigger};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn recall_f1_examples() {
        let s: Scores<f64> = recall_f1(ConfusionCounts::new(3, 1, 1));
        assert!(close(s.recall, 0.75) && close(s.precision, 0.75) && close(s.f1, 0.75));
        let s: Scores<f64> = recall_f1(ConfusionCounts::new(0, 0, 0));
        assert!(s.empty && s.recall == 0.0 && s.f1 == 0.0);
        let s: Scores<f64> = recall_f1(ConfusionCounts::new(1, 0, 1));
        assert!(close(s.recall, 0.5) && close(s.precision, 1.0) && close(s.f1, 2.0 / 3.0));
        let s: Scores<f32> = recall_f1(ConfusionCounts::new(1, 0, 1));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-6);
    }

    fn verdict(class: DefectClass, reach: bool, trig: bool, detect: bool) -> Verdict {
        let trigger = match class {
            DefectClass::Display => Trigger::NotApplicable,
            DefectClass::Interaction => Trigger::from_bool(trig),
        };
        Verdict::new(class, reach, trigger, detect, vec![], Vec::<Segment>::new(), vec![]).unwrap()
    }

    fn run(i: u32, mode: FaultMode, reach: bool, detect: bool, claimed: bool) -> RunOutcome {
        RunOutcome::scored(
            UnitKey::new("m", "c", "t"),
            i,
            mode,
            verdict(mode.defect_class(), reach, detect, detect),
            claimed,
        )
    }

    #[test]
    fn any_of_k_versus_first_run() {
        let m = FaultMode::OperationNoResponse;
        let runs = vec![run(2, m, true, true, true), run(1, m, true, false, false), run(3, m, true, false, false)];
        assert!(!collapse_pass_at_k(&runs, 1, Stage::Detect).unwrap().success);
        assert!(collapse_pass_at_k(&runs, 3, Stage::Detect).unwrap().success);
    }

    #[test]
    fn display_trigger_follows_reach() {
        let runs = vec![run(1, FaultMode::ContentRendering, true, false, false)];
        assert!(collapse_pass_at_k(&runs, 1, Stage::Trigger).unwrap().success);
    }

    #[test]
    fn unscored_units_are_excluded() {
        let m = FaultMode::ElementLayout;
        let runs = vec![RunOutcome::unscored(UnitKey::new("m", "c", "t"), 1, m, "timeout")];
        assert!(collapse_pass_at_k(&runs, 1, Stage::Reach).is_err());
        let report = aggregate_report(&runs, &ReportConfig::default());
        assert_eq!(report.unscored.units, 1);
        assert_eq!(report.unscored.runs, 1);
        let t = report.model("m").unwrap().table(1).unwrap();
        assert!(t.cells.iter().all(|c| c.status == CellStatus::Empty && c.counts.units() == 0));
    }

    #[test]
    fn confusion_counts_fp_at_detect_only() {
        let mut outcomes = Vec::new();
        for (i, (success, fr)) in [(true, false), (true, false), (true, false), (false, true)].into_iter().enumerate() {
            for stage in Stage::ALL {
                outcomes.push(StageOutcome {
                    unit: UnitKey::new("m", "c", &format!("t{i}")),
                    fault_mode: FaultMode::UnexpectedTaskResult,
                    stage,
                    success,
                    false_report: fr,
                });
            }
        }
        let c = confusion(&outcomes);
        assert_eq!(c[&(Stage::Detect, FaultMode::UnexpectedTaskResult)], ConfusionCounts::new(3, 1, 1));
        assert_eq!(c[&(Stage::Reach, FaultMode::UnexpectedTaskResult)], ConfusionCounts::new(3, 0, 1));
        assert!(confusion(&[]).is_empty());
    }

    #[test]
    fn micro_overall_pools_counts() {
        let mut outcomes = vec![run(1, FaultMode::ContentRendering, true, true, true)];
        let mut r = run(1, FaultMode::OperationNoResponse, true, false, true);
        r.case_id = "c2".into();
        outcomes.push(r);
        let report = aggregate_report(&outcomes, &ReportConfig::default());
        let t = report.model("m").unwrap().table(1).unwrap();
        let overall = t.cell(Column::Overall, Stage::Detect).unwrap();
        let cr = t.cell(Column::Cr, Stage::Detect).unwrap();
        let onr = t.cell(Column::Onr, Stage::Detect).unwrap();
        assert_eq!(overall.counts.tp, cr.counts.tp + onr.counts.tp);
        assert_eq!(overall.counts, ConfusionCounts::new(1, 1, 1));
        assert_eq!(t.cell(Column::El, Stage::Detect).unwrap().status, CellStatus::Empty);
    }

    #[test]
    fn macro_overall_averages_scores() {
        let mut outcomes = vec![run(1, FaultMode::ContentRendering, true, true, true)];
        let mut r = run(1, FaultMode::OperationNoResponse, true, false, false);
        r.case_id = "c2".into();
        outcomes.push(r);
        let config = ReportConfig {
            averaging: Averaging::Macro,
            ..ReportConfig::default()
        };
        let report = aggregate_report(&outcomes, &config);
        let cell = report.model("m").unwrap().table(1).unwrap().cell(Column::Overall, Stage::Detect).unwrap().clone();
        assert!(close(cell.recall.unwrap(), 0.5));
    }

    #[test]
    fn not_evaluated_stages_have_no_scores() {
        let outcomes = vec![run(1, FaultMode::ContentRendering, true, true, true)];
        let config = ReportConfig {
            not_evaluated: vec![Stage::Reach, Stage::Trigger],
            ..ReportConfig::default()
        };
        let report = aggregate_report(&outcomes, &config);
        let t = report.model("m").unwrap().table(3).unwrap();
        let c = t.cell(Column::Cr, Stage::Reach).unwrap();
        assert_eq!(c.status, CellStatus::NotEvaluated);
        assert!(c.recall.is_none());
        assert!(write_summary_md(&report).contains("n/e"));
        assert!(write_summary_csv(&report).contains("not_evaluated"));
    }
}
