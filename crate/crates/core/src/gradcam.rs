//! Gradient-weighted feature aggregation.
//!
//! Each feature map `F_i` is weighted by the spatial mean `α_i` of the
//! gradient of the target score with respect to it. By default the ReLU is
//! applied to every term `α_i · F_i` before summation; it can be moved after
//! the sum or switched off.

use serde::{Deserialize, Serialize};

use crate::detector::{require_match, Detection, DetectorAdapter, FeatureStack, GradientStack, MatchThresholds};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, Image, Tensor2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReluPlacement {
    PerTerm,
    AfterSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCamConfig {
    pub apply_relu: bool,
    pub relu_placement: ReluPlacement,
    pub upsample_to_input: bool,
    pub thresholds: MatchThresholds,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        Self {
            apply_relu: true,
            relu_placement: ReluPlacement::PerTerm,
            upsample_to_input: true,
            thresholds: MatchThresholds::default(),
        }
    }
}

impl GradCamConfig {
    pub fn without_relu() -> Self {
        Self { apply_relu: false, ..Self::default() }
    }
}

/// `α_i`: mean of gradient map `i`.
pub fn gradcam_weights<T: Scalar>(grads: &GradientStack<T>) -> Vec<T> {
    grads.iter().map(Tensor2D::mean).collect()
}

/// Combines features with per-map weights at feature resolution.
pub fn gradcam_combine<T: Scalar>(features: &FeatureStack<T>, alphas: &[T], cfg: &GradCamConfig) -> Result<Tensor2D<T>> {
    if alphas.len() != features.len() {
        return Err(Error::dim(format!("{} weights for {} feature maps", alphas.len(), features.len())));
    }
    let (w, h) = features.dims();
    let per_term = cfg.apply_relu && cfg.relu_placement == ReluPlacement::PerTerm;
    let mut acc = Tensor2D::zeros(w, h);
    for (f, &alpha) in features.iter().zip(alphas) {
        for (a, &v) in acc.data_mut().iter_mut().zip(f.data()) {
            let term = alpha * v;
            *a += if per_term { term.max(T::zero()) } else { term };
        }
    }
    if cfg.apply_relu && cfg.relu_placement == ReluPlacement::AfterSum {
        acc = acc.map(|v: T| v.max(T::zero()));
    }
    Ok(acc)
}

/// Grad-CAM map for `target` on `image`.
pub fn gradcam_saliency<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &GradCamConfig,
) -> Result<Tensor2D<T>> {
    let caps = adapter.capabilities();
    if !caps.features {
        return Err(Error::CapabilityMissing("features"));
    }
    if !caps.grad_features {
        return Err(Error::CapabilityMissing("grad"));
    }
    let matched = require_match(adapter, image, target, cfg.thresholds)?;
    let features = adapter.features(image)?;
    let grads = adapter.grad_features(image, &matched)?;
    if !features.same_shape(&grads) {
        return Err(Error::dim(format!(
            "gradient stack {}x{:?} does not match feature stack {}x{:?}",
            grads.len(),
            grads.dims(),
            features.len(),
            features.dims()
        )));
    }
    let map = gradcam_combine(&features, &gradcam_weights(&grads), cfg)?;
    if cfg.upsample_to_input {
        bilinear_resize(&map, image.width(), image.height())
    } else {
        Ok(map)
    }
}
