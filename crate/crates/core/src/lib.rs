//! Grad-CAM localization from exported activations and gradients, heatmap
//! rendering, and evaluation tooling for binary chest X-ray classifiers.
//!
//! The crate is framework-agnostic: models are hooked elsewhere and hand over
//! CAMT tensors plus a small JSON manifest ([`tensorio`]). From there
//! [`gradcam`] computes class activation maps, [`render`] turns them into PNG
//! overlays, and [`metrics`], [`splitter`] and [`focal`] cover evaluation,
//! patient-level splitting and the focal loss.

pub mod error;
pub mod focal;
pub mod gradcam;
mod label;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod splitter;
pub mod tensorio;

pub use error::{Error, Result};
pub use focal::FocalParams;
pub use gradcam::{cam_cnn, cam_for_bundle, cam_vit, normalize_cam, upsample_bilinear, Cam, ChannelWeights};
pub use label::Label;
pub use metrics::{ConfusionCounts, MetricsReport, PredictionRecord};
pub use render::RgbImage;
pub use splitter::{DatasetRecord, OversamplePlan, SplitAssignment, SplitRatios, Subset};
pub use tensorio::{load_bundle, read_tensor, write_tensor, BundleKind, CamBundle, Tensor};
