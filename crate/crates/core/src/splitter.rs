//! Patient-level dataset splitting, leakage auditing and minority-class
//! oversampling.
//!
//! Splits are made over patients, never images, so all images of one patient
//! land in the same subset. Patients are sorted by id, shuffled with
//! [`XorShift64Star`] and cut at `round(n · cumulative_ratio)`, which keeps each
//! subset within one patient of its exact share.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;
use crate::Label;

/// Matches Kermany file names: `person1_bacteria_1.jpeg`, `IM-0115-0001.jpeg`,
/// `NORMAL2-IM-1427-0001.jpeg`.
pub const KERMANY_PATIENT_PATTERN: &str = r"^(?P<patient>person\d+|(?:NORMAL2-)?IM-\d+)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub image_path: String,
    pub patient_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Subset::Train),
            "val" | "valid" | "validation" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Domain(format!("unknown subset {other:?}"))),
        }
    }
}

/// Train/validation/test fractions of the patient count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// Each fraction must lie in `(0, 1)` and they must sum to 1.
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let all = [train, val, test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r < 1.0)) {
            return Err(Error::Domain(format!(
                "ratios {train},{val},{test} must each lie strictly between 0 and 1"
            )));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "ratios {train},{val},{test} sum to {}, not 1",
                train + val + test
            )));
        }
        Ok(SplitRatios { train, val, test })
    }

    pub fn get(&self, subset: Subset) -> f64 {
        match subset {
            Subset::Train => self.train,
            Subset::Val => self.val,
            Subset::Test => self.test,
        }
    }

    /// Subset sizes for `n` items, cutting at rounded cumulative fractions.
    pub fn partition_sizes(&self, n: usize) -> [usize; 3] {
        let nf = n as f64;
        let first = ((self.train * nf).round() as usize).min(n);
        let second = (((self.train + self.val) * nf).round() as usize).clamp(first, n);
        [first, second - first, n - second]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// `"0.7,0.15,0.15"`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("ratio {p:?} is not a number")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            &[a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Domain(format!("expected three ratios, got {s:?}"))),
        }
    }
}

/// Patient → subset mapping together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub stratified: bool,
    pub patients: BTreeMap<String, Subset>,
}

impl SplitAssignment {
    pub fn subset_of(&self, patient_id: &str) -> Option<Subset> {
        self.patients.get(patient_id).copied()
    }

    pub fn patient_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in self.patients.values() {
            counts[*s as usize] += 1;
        }
        counts
    }

    /// `(record, subset)` pairs in input order.
    pub fn apply<'a>(&self, records: &'a [DatasetRecord]) -> Result<Vec<(&'a DatasetRecord, Subset)>> {
        records
            .iter()
            .map(|r| {
                self.subset_of(&r.patient_id)
                    .map(|s| (r, s))
                    .ok_or_else(|| Error::Domain(format!("patient {:?} is not assigned", r.patient_id)))
            })
            .collect()
    }

    /// Image counts per subset and class: `[subset][label]`.
    pub fn image_distribution(&self, records: &[DatasetRecord]) -> Result<[[usize; 2]; 3]> {
        let mut table = [[0usize; 2]; 3];
        for (r, s) in self.apply(records)? {
            table[s as usize][r.label as usize] += 1;
        }
        Ok(table)
    }
}

fn distinct_patients(records: &[DatasetRecord]) -> Vec<&str> {
    let set: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    set.into_iter().collect()
}

fn check_patients(records: &[DatasetRecord]) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.patient_id.is_empty()) {
        return Err(Error::Domain(format!("record {:?} has an empty patient id", r.image_path)));
    }
    Ok(())
}

fn assign_group(
    patients: &mut [&str],
    ratios: &SplitRatios,
    rng: &mut XorShift64Star,
    out: &mut BTreeMap<String, Subset>,
) {
    rng.shuffle(patients);
    let sizes = ratios.partition_sizes(patients.len());
    let mut rest: &[&str] = patients;
    for (subset, size) in Subset::ALL.into_iter().zip(sizes) {
        let (head, tail) = rest.split_at(size);
        for p in head {
            out.insert((*p).to_string(), subset);
        }
        rest = tail;
    }
}

/// Splits patients into train/val/test without class stratification.
pub fn patient_split(records: &[DatasetRecord], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    check_patients(records)?;
    let mut patients = distinct_patients(records);
    if patients.len() < Subset::ALL.len() {
        return Err(Error::Domain(format!(
            "{} distinct patients cannot fill {} subsets",
            patients.len(),
            Subset::ALL.len()
        )));
    }
    let mut rng = XorShift64Star::new(seed);
    let mut assignment = BTreeMap::new();
    assign_group(&mut patients, &ratios, &mut rng, &mut assignment);
    Ok(SplitAssignment {
        seed,
        ratios,
        stratified: false,
        patients: assignment,
    })
}

/// Like [`patient_split`], but patients are first grouped by the majority
/// label of their images (ties count as PNEUMONIA) and each group is split
/// separately, NORMAL group first.
pub fn patient_split_stratified(
    records: &[DatasetRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    check_patients(records)?;
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let v = votes.entry(r.patient_id.as_str()).or_default();
        match r.label {
            Label::Normal => v.0 += 1,
            Label::Pneumonia => v.1 += 1,
        }
    }
    if votes.len() < Subset::ALL.len() {
        return Err(Error::Domain(format!(
            "{} distinct patients cannot fill {} subsets",
            votes.len(),
            Subset::ALL.len()
        )));
    }
    let (mut normal, mut pneumonia): (Vec<&str>, Vec<&str>) = (Vec::new(), Vec::new());
    for (p, (n, pn)) in votes {
        if n > pn {
            normal.push(p);
        } else {
            pneumonia.push(p);
        }
    }
    let mut rng = XorShift64Star::new(seed);
    let mut assignment = BTreeMap::new();
    assign_group(&mut normal, &ratios, &mut rng, &mut assignment);
    assign_group(&mut pneumonia, &ratios, &mut rng, &mut assignment);
    Ok(SplitAssignment {
        seed,
        ratios,
        stratified: true,
        patients: assignment,
    })
}

/// A patient id found in more than one subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub patient_id: String,
    pub subsets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub patients: usize,
    pub images: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Cross-subset intersection of patient ids over `(subset, patient_id)` pairs.
pub fn audit_leakage<'a, I>(entries: I) -> AuditReport
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut images = 0;
    for (subset, patient) in entries {
        images += 1;
        seen.entry(patient).or_default().insert(subset);
    }
    let violations = seen
        .iter()
        .filter(|(_, subsets)| subsets.len() > 1)
        .map(|(p, subsets)| Violation {
            patient_id: p.to_string(),
            subsets: subsets.iter().map(|s| s.to_string()).collect(),
        })
        .collect();
    AuditReport {
        patients: seen.len(),
        images,
        violations,
    }
}

/// A manifest row, optionally tagged with the subset it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub record: DatasetRecord,
    pub subset: Option<String>,
}

/// Derives patient ids from image file names.
#[derive(Debug, Clone)]
pub struct PatientIdRule {
    pattern: Regex,
}

impl PatientIdRule {
    /// The pattern must contain a capture group named `patient`, or failing
    /// that at least one capture group, and is matched against the file name.
    pub fn new(pattern: &str) -> Result<Self> {
        let pattern = Regex::new(pattern).map_err(|e| Error::Domain(format!("bad patient pattern: {e}")))?;
        if pattern.captures_len() < 2 {
            return Err(Error::Domain("patient pattern needs a capture group".into()));
        }
        Ok(PatientIdRule { pattern })
    }

    pub fn kermany() -> Self {
        PatientIdRule::new(KERMANY_PATIENT_PATTERN).expect("built-in pattern compiles")
    }

    pub fn extract(&self, image_path: &str) -> Option<String> {
        let name = Path::new(image_path)
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(image_path);
        let caps = self.pattern.captures(name)?;
        caps.name("patient")
            .or_else(|| caps.get(1))
            .map(|m| m.as_str().to_string())
    }
}

impl Default for PatientIdRule {
    fn default() -> Self {
        PatientIdRule::kermany()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!()
    }
    Error::Csv(format!("{}: {e}", path.display()))
}

/// Reads `image_path,patient_id,label[,subset]`. The `patient_id` column may be
/// missing or blank, in which case `rule` derives it from the file name.
pub fn read_manifest(path: impl AsRef<Path>, rule: &PatientIdRule) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, rule).map_err(|e| match e {
        Error::Csv(msg) => Error::Csv(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_manifest(reader: impl std::io::Read, rule: &PatientIdRule) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let image_col = column("image_path").ok_or_else(|| Error::Csv("missing image_path column".into()))?;
    let label_col = column("label").ok_or_else(|| Error::Csv("missing label column".into()))?;
    let patient_col = column("patient_id");
    let subset_col = column("subset");

    let mut rows = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| Error::Csv(e.to_string()))?;
        let bad = |reason: String| Error::InvalidRecord { row: row_no, reason };
        let image_path = row.get(image_col).unwrap_or("").to_string();
        if image_path.is_empty() {
            return Err(bad("empty image_path".into()));
        }
        let label: Label = row
            .get(label_col)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        let patient_id = match patient_col.and_then(|c| row.get(c)).filter(|p| !p.is_empty()) {
            Some(p) => p.to_string(),
            None => rule
                .extract(&image_path)
                .ok_or_else(|| bad(format!("cannot derive a patient id from {image_path:?}")))?,
        };
        let subset = subset_col
            .and_then(|c| row.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        rows.push(ManifestRow {
            record: DatasetRecord {
                image_path,
                patient_id,
                label,
            },
            subset,
        });
    }
    Ok(rows)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        wtr.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    crate::tensorio::write_atomic(path, &bytes)
}

/// Writes `image_path,patient_id,label,subset` in input order.
pub fn write_split_manifest(
    path: impl AsRef<Path>,
    records: &[DatasetRecord],
    assignment: &SplitAssignment,
) -> Result<()> {
    let assigned = assignment.apply(records)?;
    write_csv(
        path.as_ref(),
        &["image_path", "patient_id", "label", "subset"],
        assigned.into_iter().map(|(r, s)| {
            vec![
                r.image_path.clone(),
                r.patient_id.clone(),
                r.label.name().to_string(),
                s.as_str().to_string(),
            ]
        }),
    )
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    write_csv(
        path.as_ref(),
        &["image_path", "patient_id", "label"],
        records.iter().map(|r| {
            vec![
                r.image_path.clone(),
                r.patient_id.clone(),
                r.label.name().to_string(),
            ]
        }),
    )
}

/// Indices into the training records, minority class resampled to parity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OversamplePlan {
    pub indices: Vec<usize>,
}

impl OversamplePlan {
    pub fn class_counts(&self, labels: &[Label]) -> [usize; 2] {
        let mut counts = [0; 2];
        for &i in &self.indices {
            counts[labels[i] as usize] += 1;
        }
        counts
    }
}

/// Every index once, plus minority indices drawn with replacement until both
/// classes have the majority count, in shuffled order.
pub fn oversample_plan(labels: &[Label], seed: u64) -> Result<OversamplePlan> {
    let (normal, pneumonia): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i] == Label::Normal);
    if normal.is_empty() || pneumonia.is_empty() {
        return Err(Error::Domain(
            "oversampling needs records of both classes".into(),
        ));
    }
    let (minority, majority) = if normal.len() <= pneumonia.len() {
        (normal, pneumonia)
    } else {
        (pneumonia, normal)
    };
    let mut rng = XorShift64Star::new(seed);
    let mut indices: Vec<usize> = (0..labels.len()).collect();
    for _ in minority.len()..majority.len() {
        indices.push(minority[rng.below(minority.len())]);
    }
    rng.shuffle(&mut indices);
    Ok(OversamplePlan { indices })
}

/// Writes `index,image_path,patient_id,label` rows in plan order, where
/// `index` is `source_rows[plan index]`.
pub fn write_oversample_manifest(
    path: impl AsRef<Path>,
    records: &[DatasetRecord],
    source_rows: &[usize],
    plan: &OversamplePlan,
) -> Result<()> {
    write_csv(
        path.as_ref(),
        &["index", "image_path", "patient_id", "label"],
        plan.indices.iter().map(|&i| {
            let r = &records[i];
            vec![
                source_rows[i].to_string(),
                r.image_path.clone(),
                r.patient_id.clone(),
                r.label.name().to_string(),
            ]
        }),
    )
}
