//! Reference implementations used as test oracles. Each one follows the
//! textbook definition with plain index loops and shares no code with the
//! library routines it checks.

#![allow(dead_code)]

use std::path::PathBuf;

use camkit::metrics::PredictionRecord;
use camkit::{BundleKind, CamBundle, Label, Tensor};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Grad-CAM over `(C, H, W)` activations/gradients given as flat slices.
pub fn naive_cam_cnn(c: usize, h: usize, w: usize, act: &[f32], grad: &[f32]) -> Vec<f64> {
    let at = |k: usize, i: usize, j: usize| k * h * w + i * w + j;
    let mut alpha = vec![0.0f64; c];
    for k in 0..c {
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                s += grad[at(k, i, j)] as f64;
            }
        }
        alpha[k] = s / (h * w) as f64;
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for k in 0..c {
                s += alpha[k] * act[at(k, i, j)] as f64;
            }
            out[i * w + j] = if s > 0.0 { s } else { 0.0 };
        }
    }
    out
}

/// Grad-CAM over `(N, C)` token activations, returned in token order.
pub fn naive_cam_vit(n: usize, c: usize, act: &[f32], grad: &[f32]) -> Vec<f64> {
    let mut alpha = vec![0.0f64; c];
    for k in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += grad[i * c + k] as f64;
        }
        alpha[k] = s / n as f64;
    }
    (0..n)
        .map(|i| {
            let s: f64 = (0..c).map(|k| alpha[k] * act[i * c + k] as f64).sum();
            s.max(0.0)
        })
        .collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn bundle(kind: BundleKind, act: Tensor, grad: Tensor, grid: Option<(usize, usize)>) -> CamBundle {
    CamBundle {
        kind,
        activations: act,
        gradients: grad,
        class_index: 1,
        image_path: PathBuf::from("unused.png"),
        image_size: (32, 32),
        patch_grid: grid,
        model_name: "oracle".into(),
    }
}

/// Scalar evaluation of half-pixel bilinear sampling at one output pixel.
pub fn bilinear_at(src: &[f64], sh: usize, sw: usize, th: usize, tw: usize, r: usize, c: usize) -> f64 {
    let coord = |d: usize, s: usize, t: usize| {
        let v = (d as f64 + 0.5) * (s as f64 / t as f64) - 0.5;
        v.max(0.0).min((s - 1) as f64)
    };
    let y = coord(r, sh, th);
    let x = coord(c, sw, tw);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let v = |i: usize, j: usize| src[i * sw + j];
    let top = v(y0, x0) + (v(y0, x1) - v(y0, x0)) * fx;
    let bottom = v(y1, x0) + (v(y1, x1) - v(y1, x0)) * fx;
    top + (bottom - top) * fy
}

/// Pairwise Mann-Whitney count over all positive/negative pairs.
pub fn brute_force_auc(records: &[PredictionRecord]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for p in records.iter().filter(|r| r.label == Label::Pneumonia) {
        for n in records.iter().filter(|r| r.label == Label::Normal) {
            pairs += 1.0;
            if p.score > n.score {
                credit += 1.0;
            } else if p.score == n.score {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

fn distinct_desc(records: &[PredictionRecord]) -> Vec<f64> {
    let mut t: Vec<f64> = records.iter().map(|r| r.score).collect();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

/// (tp, fp, fn) when predicting positive for `score >= t`, by direct counting.
pub fn counts_at(records: &[PredictionRecord], t: f64) -> (u64, u64, u64) {
    let mut c = (0, 0, 0);
    for r in records {
        match (r.score >= t, r.label == Label::Pneumonia) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}

/// Average precision from a recount at every distinct threshold.
pub fn exhaustive_ap(records: &[PredictionRecord]) -> f64 {
    let positives = records.iter().filter(|r| r.label == Label::Pneumonia).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in distinct_desc(records) {
        let (tp, fp, _) = counts_at(records, t);
        let recall = tp as f64 / positives;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Best F1 over every distinct score as threshold; ties resolved to the
/// smallest threshold.
pub fn exhaustive_best_f1(records: &[PredictionRecord]) -> (f64, f64) {
    let mut best: Option<(f64, f64)> = None;
    let mut ascending = distinct_desc(records);
    ascending.reverse();
    for t in ascending {
        let (tp, fp, fn_) = counts_at(records, t);
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, t));
        }
    }
    best.unwrap()
}

/// Random predictions on a coarse score grid so that ties are frequent.
pub fn random_predictions(rng: &mut impl Rng, n: usize) -> Vec<PredictionRecord> {
    let levels = rng.gen_range(2..=20);
    let mut records: Vec<PredictionRecord> = (0..n)
        .map(|i| {
            let label = Label::from_bit(rng.gen_bool(0.6));
            let score = rng.gen_range(0..=levels) as f64 / levels as f64;
            PredictionRecord::new(format!("img{i}"), format!("p{}", i / 2), label, score)
        })
        .collect();
    // both classes present
    records[0].label = Label::Pneumonia;
    records[n - 1].label = Label::Normal;
    records
}
