//! Deterministic inputs for the criterion benchmarks in `benches/`.

use std::path::PathBuf;

use camkit::rng::XorShift64Star;
use camkit::{BundleKind, CamBundle, DatasetRecord, Label, PredictionRecord, Tensor};

fn unit(rng: &mut XorShift64Star) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn tensor(rng: &mut XorShift64Star, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| (unit(rng) * 2.0 - 1.0) as f32).collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// A conv bundle with `channels` maps of `side` x `side`.
pub fn conv_bundle(channels: usize, side: usize, seed: u64) -> CamBundle {
    let mut rng = XorShift64Star::new(seed);
    CamBundle {
        kind: BundleKind::Conv,
        activations: tensor(&mut rng, vec![channels, side, side]),
        gradients: tensor(&mut rng, vec![channels, side, side]),
        class_index: 1,
        image_path: PathBuf::from("unused.png"),
        image_size: (224, 224),
        patch_grid: None,
        model_name: "bench".into(),
    }
}

/// A token bundle on a `side` x `side` patch grid.
pub fn vit_bundle(dim: usize, side: usize, seed: u64) -> CamBundle {
    let mut rng = XorShift64Star::new(seed);
    CamBundle {
        kind: BundleKind::VitTokens,
        activations: tensor(&mut rng, vec![side * side, dim]),
        gradients: tensor(&mut rng, vec![side * side, dim]),
        class_index: 1,
        image_path: PathBuf::from("unused.png"),
        image_size: (224, 224),
        patch_grid: Some((side, side)),
        model_name: "bench".into(),
    }
}

/// Scores rounded to 1e-3 so tie handling gets exercised.
pub fn predictions(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = XorShift64Star::new(seed);
    (0..n)
        .map(|i| {
            let label = Label::from_bit(rng.below(2) == 1);
            let score = (unit(&mut rng) * 1000.0).round() / 1000.0;
            PredictionRecord::new(format!("img{i}"), format!("p{}", i / 3), label, score)
        })
        .collect()
}

/// Roughly three images per patient.
pub fn dataset(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = XorShift64Star::new(seed);
    (0..n)
        .map(|i| {
            let patient = i / 3;
            DatasetRecord {
                image_path: format!("person{patient}_{i}.jpeg"),
                patient_id: format!("person{patient}"),
                label: if rng.below(4) == 0 { Label::Normal } else { Label::Pneumonia },
            }
        })
        .collect()
}
