//! Per-box saliency maps for object detectors and their causal evaluation.
//!
//! Three generators are provided, all driven through the narrow
//! [`DetectorAdapter`](detector::DetectorAdapter) contract:
//!
//! - [`gradcam`]: feature maps weighted by mean gradients of the box score;
//! - [`rise`]: random low-resolution masks weighted by the masked box score;
//! - [`sidu`]: feature-map masks weighted by similarity difference and uniqueness.
//!
//! Maps are scored with the deletion and insertion curves of [`metrics`].
//! [`micro`] is a small in-process detector whose gradients are known in
//! closed form, and [`bridge`] reaches detectors living in other processes.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod bridge;
pub mod detector;
pub mod error;
pub mod f32t;
pub mod gradcam;
pub mod method;
pub mod metrics;
pub mod micro;
pub mod pipeline;
pub mod rise;
pub mod scalar;
pub mod sidu;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor2DF32 = tensor::Tensor2D<f32>;
pub type Tensor2DF64 = tensor::Tensor2D<f64>;
pub type ImageF32 = tensor::Image<f32>;
pub type ImageF64 = tensor::Image<f64>;
pub type SaliencyMapF32 = tensor::Tensor2D<f32>;
pub type SaliencyMapF64 = tensor::Tensor2D<f64>;
pub type BBoxF32 = detector::BBox<f32>;
pub type BBoxF64 = detector::BBox<f64>;
pub type DetectionF32 = detector::Detection<f32>;
pub type DetectionF64 = detector::Detection<f64>;
pub type FeatureStackF64 = detector::FeatureStack<f64>;
pub type CurveF64 = metrics::Curve<f64>;
pub type MicroDetectorF32 = micro::MicroDetector<f32>;
pub type MicroDetectorF64 = micro::MicroDetector<f64>;
