//! Answer parsing, confusion matrices, metrics, averaging and reports.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{parse_variant_line, Label, LabeledDataset};
use crate::gateway::RunStatus;

pub const DEFAULT_BASELINES: &str = include_str!("../data/baselines.csv");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot average an empty set of runs")]
    Empty,
    #[error("rows from different cells: {0}/{1} vs {2}/{3}")]
    MixedCells(String, String, String, String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        EvalError::Parse {
            line,
            reason: e.to_string(),
        }
    }
}

/// Variant ids a model flagged, with the sequence it claimed was reworked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub entries: BTreeMap<u64, String>,
    pub unparsed_lines: Vec<String>,
    /// Ids seen again after their first line; the first claim is kept.
    pub duplicates: Vec<u64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Moves entries whose id is not in `ds` to `unparsed_lines`.
    pub fn restrict_to(mut self, ds: &LabeledDataset) -> Self {
        let foreign: Vec<u64> = self
            .entries
            .keys()
            .copied()
            .filter(|id| ds.get(*id).is_none())
            .collect();
        for id in foreign {
            if let Some(claim) = self.entries.remove(&id) {
                self.unparsed_lines.push(format!("{id}# {claim}"));
            }
        }
        self
    }
}

/// Lenient: anything that is not an `id# sequence` line lands in
/// `unparsed_lines`.
pub fn parse_predictions(text: &str) -> PredictionSet {
    let mut set = PredictionSet::default();
    for raw in text.lines() {
        let line = raw.trim();
        match parse_variant_line(line) {
            Ok((id, _)) => {
                let claim = line.split_once('#').map(|(_, s)| s.trim()).unwrap_or("");
                match set.entries.entry(id) {
                    Entry::Occupied(_) => set.duplicates.push(id),
                    Entry::Vacant(v) => {
                        v.insert(claim.to_string());
                    }
                }
            }
            Err(_) => set.unparsed_lines.push(raw.to_string()),
        }
    }
    set
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Id-level scoring: the claimed sequence text is not checked.
pub fn score(ds: &LabeledDataset, preds: &PredictionSet) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for lv in ds.items() {
        let positive = preds.entries.contains_key(&lv.id);
        match (positive, lv.label) {
            (true, Label::Rework) => cm.tp += 1,
            (true, Label::Normal) => cm.fp += 1,
            (false, Label::Rework) => cm.fn_ += 1,
            (false, Label::Normal) => cm.tn += 1,
        }
    }
    cm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub fdr: f64,
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Percentages in [0, 100]; every 0/0 ratio is reported as 0.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = pct(cm.tp, cm.tp + cm.fp);
    let recall = pct(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        accuracy: pct(cm.tp + cm.tn, cm.total()),
        fdr: pct(cm.fp, cm.fp + cm.tp),
    }
}

/// Two-decimal rendering used everywhere a percentage is shown.
pub fn fmt_pct(v: f64) -> String {
    format!("{v:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub distribution: String,
    pub mode: String,
    pub run: usize,
    pub status: RunStatus,
    #[serde(flatten)]
    pub counts: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsRow {
    pub fn new(distribution: &str, mode: &str, run: usize, status: RunStatus, cm: ConfusionMatrix) -> Self {
        let cm = if status == RunStatus::DeadlineExceeded {
            ConfusionMatrix::default()
        } else {
            cm
        };
        MetricsRow {
            distribution: distribution.to_string(),
            mode: mode.to_string(),
            run,
            status,
            counts: cm,
            metrics: metrics(&cm),
        }
    }

    /// The all-zero row a timed-out run is scored as.
    pub fn deadline_sentinel(distribution: &str, mode: &str, run: usize) -> Self {
        Self::new(distribution, mode, run, RunStatus::DeadlineExceeded, ConfusionMatrix::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAverage {
    pub distribution: String,
    pub mode: String,
    pub runs: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub fdr: f64,
    /// Whether any run flagged at least one variant.
    pub any_positive: bool,
}

/// Arithmetic means over the runs of one (distribution, mode) cell.
pub fn aggregate(rows: &[MetricsRow]) -> Result<CellAverage, EvalError> {
    let first = rows.first().ok_or(EvalError::Empty)?;
    if let Some(other) = rows
        .iter()
        .find(|r| r.distribution != first.distribution || r.mode != first.mode)
    {
        return Err(EvalError::MixedCells(
            first.distribution.clone(),
            first.mode.clone(),
            other.distribution.clone(),
            other.mode.clone(),
        ));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    Ok(CellAverage {
        distribution: first.distribution.clone(),
        mode: first.mode.clone(),
        runs: rows.len(),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        accuracy: mean(|m| m.accuracy),
        fdr: mean(|m| m.fdr),
        any_positive: rows.iter().any(|r| r.counts.tp + r.counts.fp > 0),
    })
}

/// Groups rows by cell (in first-seen order) and averages each group.
/// Runs that ended in a provider error are left out.
pub fn aggregate_cells(rows: &[MetricsRow]) -> Vec<CellAverage> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status != RunStatus::ProviderError) {
        let key = (r.distribution.clone(), r.mode.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.clone());
    }
    order
        .into_iter()
        .filter_map(|k| aggregate(&groups[&k]).ok())
        .collect()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "distribution", "mode", "run", "status", "tp", "tn", "fp", "fn", "precision", "recall",
        "f1", "accuracy", "fdr",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.distribution.clone(),
            r.mode.clone(),
            r.run.to_string(),
            serde_json::to_value(r.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            r.counts.tp.to_string(),
            r.counts.tn.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            fmt_pct(m.precision),
            fmt_pct(m.recall),
            fmt_pct(m.f1),
            fmt_pct(m.accuracy),
            fmt_pct(m.fdr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MetricsCsvRow {
    distribution: String,
    mode: String,
    run: usize,
    status: RunStatus,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

/// Reads `metrics.csv`; percentages are recomputed from the counts.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let r: MetricsCsvRow = rec?;
        rows.push(MetricsRow::new(
            &r.distribution,
            &r.mode,
            r.run,
            r.status,
            ConfusionMatrix::new(r.tp, r.tn, r.fp, r.fn_),
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub method: String,
    pub accuracy: f64,
    pub fdr: f64,
}

pub fn load_baselines<R: Read>(input: R) -> Result<Vec<Baseline>, EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn default_baselines() -> Vec<Baseline> {
    load_baselines(DEFAULT_BASELINES.as_bytes()).expect("shipped baselines parse")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub accuracy: f64,
    pub fdr: f64,
    pub best_accuracy: bool,
    pub best_fdr: bool,
}

fn mode_label(mode: &str) -> String {
    mode.parse::<crate::prompt::PromptMode>()
        .map(|m| m.to_string())
        .unwrap_or_else(|_| mode.to_string())
}

/// Baselines followed by the best cell (by accuracy) of each distribution.
/// The best accuracy and the lowest FDR are flagged; a harness row that
/// never flagged anything cannot win on FDR.
pub fn comparison_rows(cells: &[CellAverage], baselines: &[Baseline]) -> Vec<ComparisonRow> {
    let mut rows: Vec<(ComparisonRow, bool)> = baselines
        .iter()
        .map(|b| {
            (
                ComparisonRow {
                    method: b.method.clone(),
                    accuracy: b.accuracy,
                    fdr: b.fdr,
                    best_accuracy: false,
                    best_fdr: false,
                },
                true,
            )
        })
        .collect();
    let mut seen = BTreeSet::new();
    for c in cells {
        if !seen.insert(c.distribution.clone()) {
            continue;
        }
        let best = cells
            .iter()
            .filter(|o| o.distribution == c.distribution)
            .fold(c, |a, b| if b.accuracy > a.accuracy { b } else { a });
        rows.push((
            ComparisonRow {
                method: format!("LLM {} ({})", best.distribution, mode_label(&best.mode)),
                accuracy: best.accuracy,
                fdr: best.fdr,
                best_accuracy: false,
                best_fdr: false,
            },
            best.any_positive,
        ));
    }
    let top_acc = rows.iter().map(|(r, _)| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let low_fdr = rows
        .iter()
        .filter(|(_, ok)| *ok)
        .map(|(r, _)| r.fdr)
        .fold(f64::INFINITY, f64::min);
    rows.into_iter()
        .map(|(mut r, ok)| {
            r.best_accuracy = fmt_pct(r.accuracy) == fmt_pct(top_acc);
            r.best_fdr = ok && fmt_pct(r.fdr) == fmt_pct(low_fdr);
            r
        })
        .collect()
}

fn flag(v: f64, best: bool) -> String {
    if best {
        format!("**{}**", fmt_pct(v))
    } else {
        fmt_pct(v)
    }
}

/// Returns `(report.md, comparison.csv)`.
pub fn render_report(rows: &[MetricsRow], baselines: &[Baseline]) -> (String, String) {
    let cells = aggregate_cells(rows);
    let mut md = String::from("# Rework anomaly detection results\n\n");

    if !rows.is_empty() {
        md.push_str("## Per-run results\n\n");
        md.push_str("| Distribution | Prompt | Run | Status | TP | TN | FP | FN | Precision | Recall | F1 | Accuracy | FDR |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
        for c in &cells {
            for r in rows.iter().filter(|r| r.distribution == c.distribution && r.mode == c.mode) {
                let m = &r.metrics;
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.distribution,
                    mode_label(&r.mode),
                    r.run,
                    status_label(r.status),
                    r.counts.tp,
                    r.counts.tn,
                    r.counts.fp,
                    r.counts.fn_,
                    fmt_pct(m.precision),
                    fmt_pct(m.recall),
                    fmt_pct(m.f1),
                    fmt_pct(m.accuracy),
                    fmt_pct(m.fdr),
                ));
            }
            md.push_str(&format!(
                "| {} | {} | Avg | {} runs | | | | | {} | {} | {} | {} | {} |\n",
                c.distribution,
                mode_label(&c.mode),
                c.runs,
                fmt_pct(c.precision),
                fmt_pct(c.recall),
                fmt_pct(c.f1),
                fmt_pct(c.accuracy),
                fmt_pct(c.fdr),
            ));
        }
        let excluded: Vec<&MetricsRow> = rows
            .iter()
            .filter(|r| r.status == RunStatus::ProviderError)
            .collect();
        for r in rows.iter().filter(|r| r.status == RunStatus::ProviderError) {
            if !cells.iter().any(|c| c.distribution == r.distribution && c.mode == r.mode) {
                md.push_str(&format!(
                    "| {} | {} | {} | provider error | | | | | | | | | |\n",
                    r.distribution,
                    mode_label(&r.mode),
                    r.run
                ));
            }
        }
        if !excluded.is_empty() {
            md.push_str(&format!(
                "\n{} run(s) ended in a provider error and are excluded from the averages.\n",
                excluded.len()
            ));
        }
        md.push('\n');
    }

    let comparison = comparison_rows(&cells, baselines);
    md.push_str("## Comparison\n\n| Method | Accuracy (%) | FDR (%) |\n|---|---|---|\n");
    for r in &comparison {
        md.push_str(&format!(
            "| {} | {} | {} |\n",
            r.method,
            flag(r.accuracy, r.best_accuracy),
            flag(r.fdr, r.best_fdr)
        ));
    }
    md.push_str("\nBold marks the highest accuracy and the lowest FDR.");
    if !cells.is_empty() {
        md.push_str(" LLM rows show the best prompt per distribution; their FDR is the mean of per-run FDR.");
    }
    md.push('\n');

    let mut csv_out = String::from("method,accuracy,fdr,best_accuracy,best_fdr\n");
    for r in &comparison {
        let method = if r.method.contains(',') {
            format!("\"{}\"", r.method)
        } else {
            r.method.clone()
        };
        csv_out.push_str(&format!(
            "{},{},{},{},{}\n",
            method,
            fmt_pct(r.accuracy),
            fmt_pct(r.fdr),
            r.best_accuracy,
            r.best_fdr
        ));
    }
    (md, csv_out)
}

fn status_label(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::DeadlineExceeded => "deadline exceeded",
        RunStatus::ProviderError => "provider error",
    }
}
