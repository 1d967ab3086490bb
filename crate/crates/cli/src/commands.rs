use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camkit::focal::{loss_check_table, FocalParams, LossCheckRow};
use camkit::gradcam::{cam_for_bundle, normalize_cam, upsample_bilinear};
use camkit::metrics::{evaluate, read_predictions, render_table};
use camkit::render::{colorize, overlay, read_image, write_png, RgbImage};
use camkit::splitter::{
    audit_leakage, oversample_plan, patient_split, patient_split_stratified, read_manifest,
    write_oversample_manifest, write_split_manifest, ManifestRow, PatientIdRule,
};
use camkit::tensorio::{write_atomic, write_tensor};
use camkit::{load_bundle, DatasetRecord, Label, SplitRatios, Subset, Tensor};
use log::{info, warn};
use rayon::prelude::*;

use crate::cli::{AuditArgs, CamArgs, LossCheckArgs, MetricsArgs, OversampleArgs, SplitArgs};
use crate::Failure;

type CmdResult = Result<ExitCode, Failure>;

const GRAD_CHECK_TOL: f64 = 1e-6;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn parse_size(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || invalid(format!("--target-size {text:?} is not HxW with positive extents"));
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

struct CamJob {
    manifest: PathBuf,
    png: PathBuf,
    raw: PathBuf,
}

struct Rendered {
    image: RgbImage,
    raw: Tensor,
}

fn cam_jobs(args: &CamArgs) -> Result<Vec<CamJob>, Failure> {
    if !args.bundle.is_dir() {
        return Ok(vec![CamJob {
            manifest: args.bundle.clone(),
            png: args.out.clone(),
            raw: args.out.with_extension("camt"),
        }]);
    }
    if args.out.exists() && !args.out.is_dir() {
        return Err(invalid(format!(
            "--out {} must be a directory when --bundle is a directory",
            args.out.display()
        )));
    }
    let mut manifests: Vec<PathBuf> = std::fs::read_dir(&args.bundle)
        .map_err(|e| io_failure(&args.bundle, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    manifests.sort();
    if manifests.is_empty() {
        return Err(invalid(format!("no *.json manifests in {}", args.bundle.display())));
    }
    Ok(manifests
        .into_iter()
        .map(|m| {
            let stem = m.file_stem().unwrap_or_default().to_os_string();
            let base = args.out.join(stem);
            CamJob {
                png: base.with_extension("png"),
                raw: base.with_extension("camt"),
                manifest: m,
            }
        })
        .collect())
}

fn render_one(
    job: &CamJob,
    image: Option<&Path>,
    target: Option<(usize, usize)>,
    alpha: f64,
) -> Result<Rendered, Failure> {
    let bundle = load_bundle(&job.manifest)?;
    let raw = cam_for_bundle(&bundle)?;
    info!(
        "{}: {} {}x{} map from {}",
        job.manifest.display(),
        bundle.kind.as_str(),
        raw.height(),
        raw.width(),
        bundle.model_name
    );

    let base = match image {
        Some(path) => Some(read_image(path)?),
        None if bundle.image_path.is_file() => Some(read_image(&bundle.image_path)?),
        None => {
            warn!(
                "{}: base image {} not found, writing the heatmap alone",
                job.manifest.display(),
                bundle.image_path.display()
            );
            None
        }
    };
    let size = match (&base, target) {
        (Some(b), Some(t)) if (b.height(), b.width()) != t => {
            return Err(invalid(format!(
                "--target-size {}x{} does not match the {}x{} base image",
                t.0,
                t.1,
                b.height(),
                b.width()
            )))
        }
        (_, Some(t)) => t,
        (Some(b), None) => (b.height(), b.width()),
        (None, None) => bundle.image_size,
    };

    let heat = upsample_bilinear(&normalize_cam(&raw), size.0, size.1)?;
    let image = match &base {
        Some(b) => overlay(b, &heat, alpha)?,
        None => colorize(&heat)?,
    };
    Ok(Rendered {
        image,
        raw: raw.to_tensor(),
    })
}

pub fn cam(args: CamArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(invalid(format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    let target = args.target_size.as_deref().map(parse_size).transpose()?;
    let jobs = cam_jobs(&args)?;

    // Everything is computed before the first write so a bad bundle leaves no output.
    let rendered: Vec<Result<Rendered, Failure>> = jobs
        .par_iter()
        .map(|job| render_one(job, args.image.as_deref(), target, args.alpha))
        .collect();
    let rendered: Vec<Rendered> = rendered.into_iter().collect::<Result<_, _>>()?;

    if args.bundle.is_dir() {
        std::fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    }
    for (job, r) in jobs.iter().zip(&rendered) {
        write_png(&r.image, &job.png)?;
        write_tensor(&r.raw, &job.raw)?;
        say!("{} -> {}", job.manifest.display(), job.png.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn metrics(args: MetricsArgs) -> CmdResult {
    if !args.threshold.is_finite() {
        return Err(invalid("--threshold must be finite"));
    }
    let records = read_predictions(&args.predictions)?;
    let report = evaluate(&records, args.threshold)?;
    let model = args.model.unwrap_or_else(|| {
        args.predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    write_json(&args.report, &report)?;
    say!("{}", render_table(&report, &model).trim_end());
    Ok(ExitCode::SUCCESS)
}

fn load_records(path: &Path, pattern: &str) -> Result<Vec<ManifestRow>, Failure> {
    let rule = PatientIdRule::new(pattern)?;
    Ok(read_manifest(path, &rule)?)
}

pub fn split(args: SplitArgs) -> CmdResult {
    let ratios: SplitRatios = args.ratios.parse()?;
    let rule = PatientIdRule::new(&args.rule.patient_pattern)?;
    let rows = read_manifest(&args.manifest, &rule)?;
    let records: Vec<DatasetRecord> = rows.into_iter().map(|r| r.record).collect();
    let assignment = if args.stratified {
        patient_split_stratified(&records, ratios, args.seed)?
    } else {
        patient_split(&records, ratios, args.seed)?
    };
    let dist = assignment.image_distribution(&records)?;

    write_split_manifest(&args.out, &records, &assignment)?;
    write_json(&args.out.with_extension("split.json"), &assignment)?;

    let patients = assignment.patient_counts();
    say!("seed {}  ratios {},{},{}", args.seed, ratios.train, ratios.val, ratios.test);
    say!("{:<6}  {:>8}  {:>8}  {:>9}  {:>6}", "Subset", "Patients", "NORMAL", "PNEUMONIA", "Total");
    for s in Subset::ALL {
        let row = dist[s as usize];
        say!(
            "{:<6}  {:>8}  {:>8}  {:>9}  {:>6}",
            s.as_str(),
            patients[s as usize],
            row[Label::Normal as usize],
            row[Label::Pneumonia as usize],
            row[0] + row[1]
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn audit(args: AuditArgs) -> CmdResult {
    let mut tagged: Vec<(String, String)> = Vec::new();
    let multiple = args.manifest.len() > 1;
    for path in &args.manifest {
        let rows = load_records(path, &args.rule.patient_pattern)?;
        let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !multiple && rows.iter().any(|r| r.subset.is_none()) {
            return Err(invalid(format!(
                "{} has rows without a subset; pass a split manifest or several manifests",
                path.display()
            )));
        }
        for r in rows {
            let subset = r.subset.unwrap_or_else(|| fallback.clone());
            tagged.push((subset, r.record.patient_id));
        }
    }
    let report = audit_leakage(tagged.iter().map(|(s, p)| (s.as_str(), p.as_str())));
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    say!("{}", serde_json::to_string_pretty(&report).map_err(|e| invalid(e.to_string()))?);
    if report.is_clean() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} patient(s) appear in more than one subset", report.violations.len());
        Ok(ExitCode::from(1))
    }
}

pub fn oversample(args: OversampleArgs) -> CmdResult {
    let rows = load_records(&args.manifest, &args.rule.patient_pattern)?;
    let has_subsets = rows.iter().any(|r| r.subset.is_some());
    let mut source_rows = Vec::new();
    let mut records = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let keep = match &row.subset {
            _ if !has_subsets => true,
            Some(s) => s.parse::<Subset>().ok() == Some(Subset::Train),
            None => false,
        };
        if keep {
            source_rows.push(i);
            records.push(row.record);
        }
    }
    if has_subsets {
        info!("oversampling {} train rows", records.len());
    }
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let plan = oversample_plan(&labels, args.seed)?;
    write_oversample_manifest(&args.out, &records, &source_rows, &plan)?;
    let [normal, pneumonia] = plan.class_counts(&labels);
    say!(
        "{} rows -> {} planned (NORMAL {normal}, PNEUMONIA {pneumonia}), seed {}",
        records.len(),
        plan.indices.len(),
        args.seed
    );
    Ok(ExitCode::SUCCESS)
}

pub fn loss_check(args: LossCheckArgs) -> CmdResult {
    let params = FocalParams::new(args.alpha, args.gamma)?;
    let rows = if args.grid {
        let logits: Vec<f64> = (0..=40).map(|i| -10.0 + 0.5 * i as f64).collect();
        loss_check_table(&logits, &[0.0, 1.0, 2.0, 5.0], &[0.25, 0.5, 0.75], 1e-5)?
    } else {
        loss_check_table(
            &[-5.0, -1.0, 0.0, 0.3, 1.0, 5.0],
            &[params.gamma()],
            &[params.alpha()],
            1e-5,
        )?
    };
    print_loss_table(&rows);
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let failing = rows.iter().filter(|r| r.rel_err > GRAD_CHECK_TOL).count();
    say!("\n{} rows, max relative gradient error {worst:.3e} (tolerance {GRAD_CHECK_TOL:e})", rows.len());
    if failing > 0 {
        eprintln!("{failing} row(s) exceed the gradient tolerance");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_loss_table(rows: &[LossCheckRow]) {
    say!(
        "{:>2}  {:>7}  {:>5}  {:>5}  {:>14}  {:>14}  {:>14}  {:>9}",
        "y", "z", "alpha", "gamma", "loss", "dL/dz", "central diff", "rel err"
    );
    // group rows by (label, alpha, gamma) for readability
    let mut groups: BTreeMap<(u8, u64, u64), Vec<&LossCheckRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.label.as_u8(), r.alpha.to_bits(), r.gamma.to_bits()))
            .or_default()
            .push(r);
    }
    for group in groups.values() {
        for r in group {
            say!(
                "{:>2}  {:>7.2}  {:>5.2}  {:>5.1}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>9.2e}",
                r.label.as_u8(),
                r.logit,
                r.alpha,
                r.gamma,
                r.loss,
                r.grad,
                r.grad_fd,
                r.rel_err
            );
        }
    }
}
