//! Gradient-weighted class activation maps.
//!
//! For convolutional feature maps `A` of shape `(C, H, W)` each channel gets
//! the spatial mean of its gradient as weight, and the map is the ReLU of the
//! weighted channel sum. Token activations of shape `(N, C)` are handled the
//! same way with the mean taken over tokens; the per-token values are then laid
//! out on the patch grid in raster order.
//!
//! Accumulation happens in `f64`.

use crate::error::{Error, Result};
use crate::tensorio::{BundleKind, CamBundle, Tensor};

/// A two-dimensional nonnegative activation map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Cam {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: "cam extents must be positive",
            });
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} cam needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!(
                "cam value {} at index {i} is not a finite nonnegative number",
                values[i]
            )));
        }
        Ok(Cam {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The map as a rank-2 `f32` tensor `(height, width)`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| v as f32).collect();
        Tensor::new(vec![self.height, self.width], data).expect("cam extents are positive")
    }
}

/// Per-channel importance weights, one per channel of the source tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(pub Vec<f64>);

impl ChannelWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn expect_kind(bundle: &CamBundle, kind: BundleKind) -> Result<()> {
    if bundle.kind != kind {
        return Err(Error::WrongKind {
            expected: kind.as_str(),
            found: bundle.kind.as_str(),
        });
    }
    Ok(())
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Spatially averaged gradients of a `(C, H, W)` tensor.
pub fn conv_channel_weights(gradients: &Tensor) -> Result<ChannelWeights> {
    expect_rank(gradients, 3, "gradients")?;
    let (c, h, w) = (gradients.shape()[0], gradients.shape()[1], gradients.shape()[2]);
    let plane = h * w;
    let weights = gradients
        .data()
        .chunks_exact(plane)
        .take(c)
        .map(|ch| ch.iter().map(|&g| g as f64).sum::<f64>() / plane as f64)
        .collect();
    Ok(ChannelWeights(weights))
}

/// Token-averaged gradients of an `(N, C)` tensor.
pub fn token_channel_weights(gradients: &Tensor) -> Result<ChannelWeights> {
    expect_rank(gradients, 2, "gradients")?;
    let (n, c) = (gradients.shape()[0], gradients.shape()[1]);
    let mut sums = vec![0.0f64; c];
    for row in gradients.data().chunks_exact(c) {
        for (s, &g) in sums.iter_mut().zip(row) {
            *s += g as f64;
        }
    }
    for s in &mut sums {
        *s /= n as f64;
    }
    Ok(ChannelWeights(sums))
}

/// Grad-CAM for a convolutional bundle. Output is `H × W`, not normalized.
pub fn cam_cnn(bundle: &CamBundle) -> Result<Cam> {
    expect_kind(bundle, BundleKind::Conv)?;
    expect_rank(&bundle.activations, 3, "activations")?;
    if bundle.activations.shape() != bundle.gradients.shape() {
        return Err(Error::ShapeMismatch(format!(
            "activations {:?} vs gradients {:?}",
            bundle.activations.shape(),
            bundle.gradients.shape()
        )));
    }
    let weights = conv_channel_weights(&bundle.gradients)?;
    let (h, w) = (bundle.activations.shape()[1], bundle.activations.shape()[2]);
    let plane = h * w;

    let mut acc = vec![0.0f64; plane];
    for (channel, &alpha) in bundle
        .activations
        .data()
        .chunks_exact(plane)
        .zip(weights.as_slice())
    {
        for (a, &v) in acc.iter_mut().zip(channel) {
            *a += alpha * v as f64;
        }
    }
    relu_in_place(&mut acc);
    Cam::new(h, w, acc)
}

/// Grad-CAM for a patch-token bundle laid out on a `(grid_h, grid_w)` grid.
pub fn cam_vit(bundle: &CamBundle, grid: (usize, usize)) -> Result<Cam> {
    expect_kind(bundle, BundleKind::VitTokens)?;
    expect_rank(&bundle.activations, 2, "activations")?;
    if bundle.activations.shape() != bundle.gradients.shape() {
        return Err(Error::ShapeMismatch(format!(
            "activations {:?} vs gradients {:?}",
            bundle.activations.shape(),
            bundle.gradients.shape()
        )));
    }
    let tokens = bundle.activations.shape()[0];
    let channels = bundle.activations.shape()[1];
    if grid.0.checked_mul(grid.1) != Some(tokens) {
        return Err(Error::GridMismatch {
            grid_h: grid.0,
            grid_w: grid.1,
            tokens,
        });
    }
    let weights = token_channel_weights(&bundle.gradients)?;
    let mut per_token: Vec<f64> = bundle
        .activations
        .data()
        .chunks_exact(channels)
        .map(|row| {
            row.iter()
                .zip(weights.as_slice())
                .map(|(&a, &alpha)| alpha * a as f64)
                .sum()
        })
        .collect();
    relu_in_place(&mut per_token);
    tokens_to_grid(per_token, grid)
}

/// Dispatches on the bundle kind; token bundles use [`CamBundle::token_grid`].
pub fn cam_for_bundle(bundle: &CamBundle) -> Result<Cam> {
    match bundle.kind {
        BundleKind::Conv => cam_cnn(bundle),
        BundleKind::VitTokens => cam_vit(bundle, bundle.token_grid()?),
    }
}

/// Token `i` lands at row `i / grid_w`, column `i % grid_w`.
pub fn tokens_to_grid(values: Vec<f64>, grid: (usize, usize)) -> Result<Cam> {
    // Row-major storage already matches raster token order.
    Cam::new(grid.0, grid.1, values)
}

/// Inverse of [`tokens_to_grid`].
pub fn grid_to_tokens(cam: &Cam) -> Vec<f64> {
    cam.values.clone()
}

fn relu_in_place(values: &mut [f64]) {
    for v in values {
        *v = if *v > 0.0 { *v } else { 0.0 };
    }
}

/// Min-max scales into `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_cam(cam: &Cam) -> Cam {
    let (lo, hi) = (cam.min(), cam.max());
    let values = if hi > lo {
        let range = hi - lo;
        cam.values
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; cam.values.len()]
    };
    Cam {
        height: cam.height,
        width: cam.width,
        values,
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
///
/// Destination pixel `d` samples source coordinate `(d + 0.5) * src / dst - 0.5`,
/// clamped to `[0, src - 1]` on each axis. Results are clamped to the source
/// value range, which is nonnegative.
pub fn upsample_bilinear(cam: &Cam, target_h: usize, target_w: usize) -> Result<Cam> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Domain(format!(
            "target size {target_h}x{target_w} must be at least 1x1"
        )));
    }
    let rows: Vec<(usize, usize, f64)> = (0..target_h)
        .map(|d| sample_axis(d, cam.height, target_h))
        .collect();
    let cols: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|d| sample_axis(d, cam.width, target_w))
        .collect();

    let (lo, hi) = (cam.min(), cam.max());
    let mut out = Vec::with_capacity(target_h * target_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = lerp(cam.get(y0, x0), cam.get(y0, x1), fx);
            let bottom = lerp(cam.get(y1, x0), cam.get(y1, x1), fx);
            out.push(lerp(top, bottom, fy).clamp(lo, hi));
        }
    }
    Cam::new(target_h, target_w, out)
}

/// `a + (b - a)·t`, exact whenever `a == b`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Lower neighbor, upper neighbor and blend fraction along one axis.
fn sample_axis(dst: usize, src_extent: usize, dst_extent: usize) -> (usize, usize, f64) {
    let scale = src_extent as f64 / dst_extent as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_extent - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src_extent - 1);
    (lo, hi, s - lo as f64)
}
