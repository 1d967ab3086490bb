use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camkit::metrics::{read_predictions, write_predictions};
use camkit::render::{jet, read_image, BaseImage};
use camkit::tensorio::read_tensor;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn camkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Copies a bundle manifest and its tensors into `dir` (the base image stays behind).
fn copy_bundle(name: &str, dir: &Path) -> PathBuf {
    for suffix in [".json", "_act.camt", "_grad.camt"] {
        let file = format!("{name}{suffix}");
        fs::copy(fixture(&file), dir.join(&file)).unwrap();
    }
    dir.join(format!("{name}.json"))
}

#[test]
fn metrics_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = camkit(&["metrics", "--predictions", s(&fixture("predictions_4.csv")), "--report", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["roc_auc"], 0.75);
    assert_eq!(json["per_class"].as_array().unwrap().len(), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Specificity") && stdout.contains("Pneumonia"));
}

#[test]
fn metrics_accepts_library_written_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let records = read_predictions(fixture("predictions_4.csv")).unwrap();
    write_predictions(&csv, &records).unwrap();
    let report = dir.path().join("r.json");
    let out = camkit(&["metrics", "--predictions", s(&csv), "--report", s(&report), "--threshold", "0.35"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["threshold"], 0.35);
    assert_eq!(json["counts"]["tp"], 2);
}

#[test]
fn audit_exit_codes() {
    let out = camkit(&["audit", "--manifest", s(&fixture("manifest_clean.csv"))]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["violations"].as_array().unwrap().len(), 0);

    let out = camkit(&["audit", "--manifest", s(&fixture("manifest_leak3.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["violations"].as_array().unwrap().len(), 3);
}

#[test]
fn audit_compares_two_plain_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    fs::write(&train, "image_path,label\nperson1_virus_1.jpeg,1\nperson2_virus_2.jpeg,1\n").unwrap();
    fs::write(&test, "image_path,label\nperson2_virus_9.jpeg,1\nIM-0001-0001.jpeg,0\n").unwrap();
    let report = dir.path().join("audit.json");
    let out = camkit(&["audit", "--manifest", s(&train), "--manifest", s(&test), "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(1));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["violations"][0]["patient_id"], "person2");
    assert_eq!(json["violations"][0]["subsets"], serde_json::json!(["test", "train"]));
}

#[test]
fn constant_cam_renders_as_zero_heat() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = copy_bundle("conv_ones", dir.path());
    let png = dir.path().join("ones.png");
    let out = camkit(&["cam", "--bundle", s(&manifest), "--out", s(&png), "--target-size", "6x5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    match read_image(&png).unwrap() {
        BaseImage::Rgb(img) => {
            assert_eq!((img.height(), img.width()), (6, 5));
            assert!(img.pixels().chunks(3).all(|p| p == jet(0.0)));
        }
        other => panic!("expected RGB output, got {other:?}"),
    }
    let raw = read_tensor(dir.path().join("ones.camt")).unwrap();
    assert_eq!(raw.shape(), &[2, 2]);
    assert_eq!(raw.data(), &[1.0; 4]);
}

#[test]
fn cam_overlays_the_bundle_image() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("two.png");
    let out = camkit(&["cam", "--bundle", s(&fixture("conv_two_channel.json")), "--out", s(&png), "--alpha", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = match read_image(fixture("xray_gray.png")).unwrap() {
        BaseImage::Gray { pixels, .. } => pixels,
        _ => unreachable!(),
    };
    match read_image(&png).unwrap() {
        BaseImage::Rgb(img) => {
            let gray: Vec<u8> = img.pixels().chunks(3).map(|p| p[0]).collect();
            assert_eq!(gray, base);
        }
        _ => panic!("expected RGB"),
    }
}

#[test]
fn cam_directory_is_deterministic_and_all_or_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bundles = dir.path().join("bundles");
    fs::create_dir(&bundles).unwrap();
    copy_bundle("conv_two_channel", &bundles);
    copy_bundle("vit_2x2", &bundles);
    fs::copy(fixture("xray_gray.png"), bundles.join("xray_gray.png")).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = camkit(&["cam", "--bundle", s(&bundles), "--out", s(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in ["conv_two_channel.png", "conv_two_channel.camt", "vit_2x2.png", "vit_2x2.camt"] {
        assert_eq!(fs::read(out_a.join(name)).unwrap(), fs::read(out_b.join(name)).unwrap(), "{name}");
    }

    copy_bundle("vit_bad_grid", &bundles);
    let out_c = dir.path().join("c");
    let res = camkit(&["cam", "--bundle", s(&bundles), "--out", s(&out_c)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out_c.exists());
}

#[test]
fn split_and_oversample_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest_kermany.csv");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let res = camkit(&["split", "--manifest", s(&manifest), "--seed", "17", "--ratios", "0.7,0.15,0.15", "--out", s(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let sidecar: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a.split.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 17);

    let audit = camkit(&["audit", "--manifest", s(&a)]);
    assert_eq!(audit.status.code(), Some(0));

    let plan = dir.path().join("plan.csv");
    let res = camkit(&["oversample", "--manifest", s(&a), "--seed", "5", "--out", s(&plan)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&plan).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let normal = rows.iter().filter(|r| r.ends_with(",NORMAL")).count();
    assert_eq!(normal * 2, rows.len());

    let stratified = dir.path().join("s.csv");
    let res = camkit(&["split", "--manifest", s(&manifest), "--seed", "17", "--out", s(&stratified), "--stratified"]);
    assert!(res.status.success());
}

#[test]
fn loss_check_passes() {
    let out = camkit(&["loss-check", "--grid"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative gradient error"));
    let out = camkit(&["loss-check", "--alpha", "0.5", "--gamma", "0"]);
    assert!(out.status.success());
    let out = camkit(&["loss-check", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_code_contract() {
    assert_eq!(camkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(camkit(&["metrics", "--bogus"]).status.code(), Some(1));
    assert_eq!(camkit(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let missing = camkit(&["metrics", "--predictions", "/nonexistent/p.csv", "--report", s(&report)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!report.exists());

    let bad_ratios = camkit(&[
        "split", "--manifest", s(&fixture("manifest_kermany.csv")), "--seed", "1", "--ratios", "0.5,0.5,0.5", "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(bad_ratios.status.code(), Some(1));
    assert!(!dir.path().join("x.csv").exists());

    let bad_alpha = camkit(&["cam", "--bundle", s(&fixture("conv_ones.json")), "--out", s(&dir.path().join("y.png")), "--alpha", "1.5"]);
    assert_eq!(bad_alpha.status.code(), Some(1));
    assert!(!dir.path().join("y.png").exists());
}
