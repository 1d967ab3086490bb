//! Binary classification metrics over per-image prediction records.
//!
//! A record is predicted positive when `score >= threshold`. Ratios whose
//! denominator is zero are reported as 0 and listed in `undefined`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::Label;

pub const PREDICTIONS_HEADER: [&str; 4] = ["id", "patient_id", "label", "score"];

/// One image's ground truth and positive-class score.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub patient_id: String,
    pub label: Label,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, patient_id: impl Into<String>, label: Label, score: f64) -> Self {
        PredictionRecord {
            id: id.into(),
            patient_id: patient_id.into(),
            label,
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

/// Threshold-dependent metrics derived from one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero and were set to 0.
    pub undefined: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestF1 {
    pub f1: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: &'static str,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

/// Everything reported for one predictions file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_records: usize,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub best_f1: f64,
    pub best_threshold: f64,
    /// NORMAL first, then PNEUMONIA.
    pub per_class: Vec<ClassRow>,
    pub undefined: Vec<String>,
}

fn ensure_nonempty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::Empty("no prediction records"))
    } else {
        Ok(())
    }
}

pub fn confusion_at_threshold(records: &[PredictionRecord], threshold: f64) -> Result<ConfusionCounts> {
    ensure_nonempty(records)?;
    let mut c = ConfusionCounts::default();
    for r in records {
        match (r.score >= threshold, r.label.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn summary_from_counts(c: &ConfusionCounts) -> Result<Summary> {
    if c.total() == 0 {
        return Err(Error::Empty("all confusion counts are zero"));
    }
    let mut undefined = Vec::new();
    let mut or_zero = |v: Option<f64>, name: &'static str| {
        v.unwrap_or_else(|| {
            undefined.push(name);
            0.0
        })
    };
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let precision = or_zero(ratio(c.tp, c.tp + c.fp), "precision");
    let recall = or_zero(ratio(c.tp, c.tp + c.fn_), "recall");
    let specificity = or_zero(ratio(c.tn, c.tn + c.fp), "specificity");
    let f1 = f1_score(precision, recall);
    if precision + recall == 0.0 {
        undefined.push("f1");
    }
    Ok(Summary {
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        undefined,
    })
}

fn class_totals(records: &[PredictionRecord]) -> (u64, u64) {
    let pos = records.iter().filter(|r| r.label.is_positive()).count() as u64;
    (pos, records.len() as u64 - pos)
}

/// Indices sorted by descending score.
fn descending_order(records: &[PredictionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].score.total_cmp(&records[a].score));
    order
}

/// Runs of equal score in descending order, as (score, positives, negatives).
fn tie_groups(records: &[PredictionRecord]) -> Vec<(f64, u64, u64)> {
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in descending_order(records) {
        let r = &records[i];
        let (pos, neg) = if r.label.is_positive() { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == r.score => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((r.score, pos, neg)),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Equivalent to the trapezoidal area under the ROC curve.
pub fn roc_auc(records: &[PredictionRecord]) -> Result<f64> {
    let (n_pos, n_neg) = class_totals(records);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc needs both classes"));
    }
    // Ascending walk: every positive beats the negatives already seen.
    // Doubled to keep the half credits integral.
    let mut neg_below: u64 = 0;
    let mut doubled_wins: u128 = 0;
    for (_, pos, neg) in tie_groups(records).into_iter().rev() {
        doubled_wins += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
    }
    Ok(doubled_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision: `Σ (R_i - R_{i-1}) · P_i` over distinct
/// score thresholds in descending order.
pub fn pr_auc(records: &[PredictionRecord]) -> Result<f64> {
    let (n_pos, _) = class_totals(records);
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("pr_auc needs at least one positive"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (_, pos, neg) in tie_groups(records) {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Threshold strictly above `score`, used as the "predict nothing" candidate.
fn above(score: f64) -> f64 {
    if score >= 0.0 {
        f64::from_bits(score.to_bits() + 1)
    } else {
        score / 2.0
    }
}

/// Maximum F1 over every distinct score used as a threshold plus a sentinel
/// above the top score. Ties go to the smallest threshold.
pub fn best_f1(records: &[PredictionRecord]) -> Result<BestF1> {
    let (n_pos, _) = class_totals(records);
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("best_f1 needs at least one positive"));
    }
    let groups = tie_groups(records);
    let mut best = BestF1 {
        f1: 0.0,
        threshold: above(groups[0].0),
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    for (score, pos, neg) in groups {
        tp += pos;
        fp += neg;
        let counts = ConfusionCounts {
            tp,
            fp,
            fn_: n_pos - tp,
            tn: 0,
        };
        let f1 = f1_from_counts(&counts);
        if f1 >= best.f1 {
            best = BestF1 { f1, threshold: score };
        }
    }
    Ok(best)
}

fn f1_from_counts(c: &ConfusionCounts) -> f64 {
    let precision = ratio(c.tp, c.tp + c.fp).unwrap_or(0.0);
    let recall = ratio(c.tp, c.tp + c.fn_).unwrap_or(0.0);
    f1_score(precision, recall)
}

/// Per-class rows: NORMAL treats label 0 as the positive class.
pub fn per_class_report(records: &[PredictionRecord], threshold: f64) -> Result<Vec<ClassRow>> {
    let counts = confusion_at_threshold(records, threshold)?;
    Ok(per_class_rows(&counts))
}

fn per_class_rows(counts: &ConfusionCounts) -> Vec<ClassRow> {
    let row = |class: &'static str, c: &ConfusionCounts| ClassRow {
        class,
        precision: ratio(c.tp, c.tp + c.fp).unwrap_or(0.0),
        recall: ratio(c.tp, c.tp + c.fn_).unwrap_or(0.0),
        specificity: ratio(c.tn, c.tn + c.fp).unwrap_or(0.0),
    };
    vec![
        row(Label::Normal.name(), &counts.swapped()),
        row(Label::Pneumonia.name(), counts),
    ]
}

/// Full report; needs both classes present.
pub fn evaluate(records: &[PredictionRecord], threshold: f64) -> Result<MetricsReport> {
    let counts = confusion_at_threshold(records, threshold)?;
    let summary = summary_from_counts(&counts)?;
    let best = best_f1(records)?;
    let mut undefined: Vec<String> = summary.undefined.iter().map(|s| s.to_string()).collect();
    for (name, c) in [("NORMAL", counts.swapped()), ("PNEUMONIA", counts)] {
        if c.tp + c.fp == 0 {
            undefined.push(format!("{name}.precision"));
        }
    }
    Ok(MetricsReport {
        n_records: records.len(),
        threshold,
        counts,
        accuracy: summary.accuracy,
        precision: summary.precision,
        recall: summary.recall,
        specificity: summary.specificity,
        f1: summary.f1,
        roc_auc: roc_auc(records)?,
        pr_auc: pr_auc(records)?,
        best_f1: best.f1,
        best_threshold: best.threshold,
        per_class: per_class_rows(&counts),
        undefined,
    })
}

/// Aligned text rendering: an overall summary row followed by the
/// per-class rows.
pub fn render_table(report: &MetricsReport, model: &str) -> String {
    let mut out = String::new();
    let w = model.len().max("Model".len());
    let _ = writeln!(
        out,
        "{:<w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}",
        "Model", "Test Acc", "ROC-AUC", "PR-AUC", "F1", "F1 thresh"
    );
    let _ = writeln!(
        out,
        "{:<w$}  {:>7.2}%  {:>8.4}  {:>8.4}  {:>8.3}  {:>9.4}",
        model,
        report.accuracy * 100.0,
        report.roc_auc,
        report.pr_auc,
        report.best_f1,
        report.best_threshold
    );
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<w$}  {:<9}  {:>9}  {:>6}  {:>11}",
        "Model", "Class", "Precision", "Recall", "Specificity"
    );
    for (i, row) in report.per_class.iter().enumerate() {
        let name = if i == 0 { model } else { "" };
        let class = match row.class {
            "NORMAL" => "Normal",
            _ => "Pneumonia",
        };
        let _ = writeln!(
            out,
            "{:<w$}  {:<9}  {:>9.4}  {:>6.4}  {:>11.4}",
            name, class, row.precision, row.recall, row.specificity
        );
    }
    if !report.undefined.is_empty() {
        let _ = writeln!(out, "\nundefined (0/0, reported as 0): {}", report.undefined.join(", "));
    }
    out
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(format!("{}: {e}", path.display()))
    }
}

/// Reads and validates a predictions CSV with header `id,patient_id,label,score`.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(file).map_err(|e| match e {
        Error::Csv(msg) => Error::Csv(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_predictions(reader: impl std::io::Read) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(Error::Csv(format!(
            "expected header {:?}, found {:?}",
            PREDICTIONS_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| Error::Csv(e.to_string()))?;
        let bad = |reason: String| Error::InvalidRecord { row: row_no, reason };
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let label = match &row[2] {
            "0" => Label::Normal,
            "1" => Label::Pneumonia,
            other => return Err(bad(format!("label {other:?} is not 0 or 1"))),
        };
        let score: f64 = row[3]
            .parse()
            .map_err(|_| bad(format!("score {:?} is not a number", &row[3])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad(format!("score {score} outside [0, 1]")));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate id {id:?}")));
        }
        records.push(PredictionRecord {
            id,
            patient_id: row[1].to_string(),
            label,
            score,
        });
    }
    Ok(records)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| csv_error(path, e);
    wtr.write_record(PREDICTIONS_HEADER).map_err(io)?;
    for r in records {
        wtr.write_record([
            r.id.as_str(),
            r.patient_id.as_str(),
            if r.label.is_positive() { "1" } else { "0" },
            &r.score.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    crate::tensorio::write_atomic(path, &bytes)
}
