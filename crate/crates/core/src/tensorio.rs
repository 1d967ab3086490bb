//! The CAMT tensor container and the bundle manifest that pairs an activation
//! tensor with its gradient.
//!
//! Layout of a CAMT file (all integers little-endian):
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `b"CAMT"`                |
//! | 4      | 2         | format version, `u16` = 1      |
//! | 6      | 1         | dtype code, `u8` = 0 (f32)     |
//! | 7      | 1         | rank, `u8`                     |
//! | 8      | 8 × rank  | extents, `u64` each            |
//! | …      | 4 × numel | payload, row-major `f32`       |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CAMT";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

const FIXED_HEADER_LEN: usize = 8;

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Checks the shape invariants (non-empty, positive extents, element count
    /// matching `data`). Finiteness is checked when a tensor crosses a file
    /// boundary.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel = checked_numel(&shape).ok_or_else(|| Error::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows",
        })?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements but {} values were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// First non-finite value, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1",
        });
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank exceeds 255",
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1",
        });
    }
    Ok(())
}

fn checked_numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Serializes a tensor into CAMT bytes.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    validate_shape(&t.shape)?;
    t.check_finite()?;
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 8 * t.rank() + 4 * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses CAMT bytes. Every malformed input maps to a typed error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader("missing magic"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::TruncatedHeader("missing version, dtype or rank"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[6]));
    }
    let rank = bytes[7] as usize;
    if rank == 0 {
        return Err(Error::InvalidShape {
            shape: Vec::new(),
            reason: "rank must be at least 1",
        });
    }
    let header_len = FIXED_HEADER_LEN + 8 * rank;
    if bytes.len() < header_len {
        return Err(Error::TruncatedHeader("shape extends past end of file"));
    }

    let mut shape = Vec::with_capacity(rank);
    let mut numel: u64 = 1;
    for chunk in bytes[FIXED_HEADER_LEN..header_len].chunks_exact(8) {
        let extent = u64::from_le_bytes(chunk.try_into().unwrap());
        if extent == 0 {
            return Err(Error::InvalidShape {
                shape: shape.clone(),
                reason: "every extent must be at least 1",
            });
        }
        let as_usize = usize::try_from(extent).map_err(|_| Error::InvalidShape {
            shape: shape.clone(),
            reason: "extent exceeds address space",
        })?;
        shape.push(as_usize);
        numel = numel.checked_mul(extent).ok_or(Error::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows",
        })?;
    }

    let payload = &bytes[header_len..];
    let expected = numel.checked_mul(4).ok_or(Error::InvalidShape {
        shape: shape.clone(),
        reason: "payload size overflows",
    })?;
    if payload.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len() as u64,
        });
    }

    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor { shape, data };
    t.check_finite()?;
    Ok(t)
}

/// Writes `t` to `destination` in CAMT format.
///
/// The bytes go to a sibling temporary file first and are renamed into place,
/// so readers never observe a partially written tensor.
pub fn write_tensor(t: &Tensor, destination: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_tensor(t)?;
    write_atomic(destination.as_ref(), &bytes)
}

pub fn read_tensor(source: impl AsRef<Path>) -> Result<Tensor> {
    let source = source.as_ref();
    let bytes = fs::read(source).map_err(|e| Error::io(source, e))?;
    decode_tensor(&bytes)
}

/// Writes through a temporary file in the destination directory and renames it.
pub fn write_atomic(destination: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match destination.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = destination
        .file_name()
        .ok_or_else(|| Error::io(destination, std::io::ErrorKind::InvalidInput.into()))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);

    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, destination)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(destination, e));
    }
    Ok(())
}

/// Which kind of layer the activations were captured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    /// Convolutional feature maps, shape `(C, H, W)`.
    Conv,
    /// Transformer patch tokens without the class token, shape `(N, C)`.
    VitTokens,
}

impl BundleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BundleKind::Conv => "conv",
            BundleKind::VitTokens => "vit_tokens",
        }
    }
}

/// On-disk JSON form of a bundle. Tensor paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub kind: BundleKind,
    pub activations: String,
    pub gradients: String,
    pub class_index: i64,
    pub image_path: String,
    pub image_size: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_grid: Option<[usize; 2]>,
    pub model_name: String,
}

/// A validated explanation request: activations, the gradients of the target
/// class score with respect to them, and where the result should be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct CamBundle {
    pub kind: BundleKind,
    pub activations: Tensor,
    pub gradients: Tensor,
    pub class_index: i64,
    /// Resolved against the manifest directory.
    pub image_path: PathBuf,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub patch_grid: Option<(usize, usize)>,
    pub model_name: String,
}

impl CamBundle {
    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.activations.shape() != self.gradients.shape() {
            return Err(Error::ShapeMismatch(format!(
                "activations {:?} vs gradients {:?}",
                self.activations.shape(),
                self.gradients.shape()
            )));
        }
        let expected_rank = match self.kind {
            BundleKind::Conv => 3,
            BundleKind::VitTokens => 2,
        };
        if self.activations.rank() != expected_rank {
            return Err(Error::ShapeMismatch(format!(
                "{} bundles need rank-{expected_rank} tensors, got shape {:?}",
                self.kind.as_str(),
                self.activations.shape()
            )));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Manifest("image_size extents must be positive".into()));
        }
        if let Some((grid_h, grid_w)) = self.patch_grid {
            if self.kind != BundleKind::VitTokens {
                return Err(Error::Manifest("patch_grid is only valid for vit_tokens".into()));
            }
            let tokens = self.activations.shape()[0];
            if grid_h.checked_mul(grid_w) != Some(tokens) {
                return Err(Error::GridMismatch {
                    grid_h,
                    grid_w,
                    tokens,
                });
            }
        }
        Ok(())
    }

    /// Patch grid for a token bundle: the recorded grid, or the square grid
    /// when the token count is a perfect square.
    pub fn token_grid(&self) -> Result<(usize, usize)> {
        if self.kind != BundleKind::VitTokens {
            return Err(Error::WrongKind {
                expected: BundleKind::VitTokens.as_str(),
                found: self.kind.as_str(),
            });
        }
        if let Some(grid) = self.patch_grid {
            return Ok(grid);
        }
        let tokens = self.activations.shape()[0];
        let side = (tokens as f64).sqrt().round() as usize;
        if side * side == tokens {
            Ok((side, side))
        } else {
            Err(Error::Manifest(format!(
                "no patch_grid given and {tokens} tokens do not form a square"
            )))
        }
    }
}

/// Reads a bundle manifest and the tensors it references, then validates it.
pub fn load_bundle(manifest: impl AsRef<Path>) -> Result<CamBundle> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let parsed: BundleManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new(""));

    let activations = read_tensor(base.join(&parsed.activations))?;
    let gradients = read_tensor(base.join(&parsed.gradients))?;
    let bundle = CamBundle {
        kind: parsed.kind,
        activations,
        gradients,
        class_index: parsed.class_index,
        image_path: base.join(&parsed.image_path),
        image_size: (parsed.image_size[0], parsed.image_size[1]),
        patch_grid: parsed.patch_grid.map(|[h, w]| (h, w)),
        model_name: parsed.model_name,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `manifest` as JSON plus the two tensors it names, all relative to
/// the manifest's directory.
pub fn write_bundle(
    manifest_path: impl AsRef<Path>,
    manifest: &BundleManifest,
    activations: &Tensor,
    gradients: &Tensor,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    write_tensor(activations, base.join(&manifest.activations))?;
    write_tensor(gradients, base.join(&manifest.gradients))?;
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    write_atomic(manifest_path, &json)
}
