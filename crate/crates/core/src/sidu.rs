//! Similarity-difference and uniqueness weighting of feature-map masks.
//!
//! Feature maps become input masks; each masked prediction `p_i` is compared
//! with the unmasked prediction `p_o` (similarity difference) and with every
//! other masked prediction (uniqueness). The map is `Σ sd_i · u_i · M_i`.

use serde::{Deserialize, Serialize};

use crate::detector::{
    checked_detect, match_box, run_indexed, Detection, DetectorAdapter, FeatureStack, MapStack, MaskStack,
    MatchThresholds, ScoreVector,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, hadamard_mask, minmax_normalize, Image, Tensor2D};

/// What the prediction vector `p` holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// The re-identified target score, as a length-1 vector (0 on no match).
    MatchedScore,
    /// Per-class scores of the detections sharing the re-identified box.
    ClassVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiduConfig {
    pub sigma: f64,
    pub binarize: bool,
    /// Threshold on the min-max normalized, upsampled map.
    pub bin_threshold: f64,
    pub score_mode: ScoreMode,
    pub thresholds: MatchThresholds,
}

impl Default for SiduConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            binarize: true,
            bin_threshold: 0.5,
            score_mode: ScoreMode::MatchedScore,
            thresholds: MatchThresholds::default(),
        }
    }
}

impl SiduConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("SIDU sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.bin_threshold > 0.0 && self.bin_threshold < 1.0) {
            return Err(Error::param(format!("bin_threshold {} outside (0,1)", self.bin_threshold)));
        }
        Ok(())
    }
}

/// Normalizes, upsamples and optionally binarizes each feature map.
pub fn build_feature_masks<T: Scalar>(
    features: &FeatureStack<T>,
    cfg: &SiduConfig,
    width: usize,
    height: usize,
) -> Result<MaskStack<T>> {
    cfg.validate()?;
    let threshold = T::lit(cfg.bin_threshold);
    let masks = features
        .iter()
        .map(|f| {
            let up = bilinear_resize(&minmax_normalize(f), width, height)?;
            Ok(if cfg.binarize {
                up.map(|v| if v >= threshold { T::one() } else { T::zero() })
            } else {
                up.map(T::clamp01)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MapStack::new(masks)
}

/// `sd_i = exp(-‖p_o − p_i‖ / (2σ²))`.
pub fn similarity_differences<T: Scalar>(p_o: &ScoreVector<T>, preds: &[ScoreVector<T>], sigma: T) -> Result<Vec<T>> {
    if sigma.is_nan() || sigma <= T::zero() {
        return Err(Error::param("SIDU sigma must be > 0"));
    }
    let scale = -T::one() / (T::lit(2.0) * sigma * sigma);
    preds.iter().map(|p| Ok((scale * p_o.distance(p)?).exp())).collect()
}

/// `u_i = Σ_j ‖p_i − p_j‖`.
pub fn uniqueness<T: Scalar>(preds: &[ScoreVector<T>]) -> Result<Vec<T>> {
    let n = preds.len();
    let mut dist = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = preds[i].distance(&preds[j])?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok(dist.chunks(n.max(1)).take(n).map(|row| row.iter().copied().sum()).collect())
}

#[derive(Clone, Debug)]
pub struct SiduOutput<T> {
    pub saliency: Tensor2D<T>,
    pub masks: MaskStack<T>,
    pub p_o: ScoreVector<T>,
    pub preds: Vec<ScoreVector<T>>,
    pub similarity: Vec<T>,
    pub uniqueness: Vec<T>,
}

fn prediction<T: Scalar>(
    dets: &[Detection<T>],
    target: &Detection<T>,
    mode: ScoreMode,
    classes: usize,
    th: MatchThresholds,
) -> Result<ScoreVector<T>> {
    let matched = match_box(dets, target, th);
    match mode {
        ScoreMode::MatchedScore => ScoreVector::scalar(matched.map_or(T::zero(), |d| d.score)),
        ScoreMode::ClassVector => {
            let mut v = vec![T::zero(); classes];
            if let Some(m) = matched {
                for d in dets.iter().filter(|d| d.bbox == m.bbox) {
                    if let Some(slot) = v.get_mut(d.class_id as usize) {
                        *slot = slot.max(d.score);
                    }
                }
            }
            ScoreVector::new(v)
        }
    }
}

pub fn sidu_explain<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &SiduConfig,
) -> Result<SiduOutput<T>> {
    cfg.validate()?;
    if !adapter.capabilities().features {
        return Err(Error::CapabilityMissing("features"));
    }
    let dets = checked_detect(adapter, image)?;
    let matched = match_box(&dets, target, cfg.thresholds).ok_or(Error::NoMatch)?;
    let classes = dets.iter().map(|d| d.class_id as usize + 1).max().unwrap_or(1);
    let p_o = prediction(&dets, &matched, cfg.score_mode, classes, cfg.thresholds)?;

    let features = adapter.features(image)?;
    let masks = build_feature_masks(&features, cfg, image.width(), image.height())?;
    let preds = run_indexed(adapter, 0..masks.len(), |i| {
        let masked = hadamard_mask(image, &masks.maps()[i])?;
        let dets = checked_detect(adapter, &masked)?;
        prediction(&dets, &matched, cfg.score_mode, classes, cfg.thresholds)
    })?;

    let similarity = similarity_differences(&p_o, &preds, T::lit(cfg.sigma))?;
    let uniq = uniqueness(&preds)?;
    let mut saliency = Tensor2D::zeros(image.width(), image.height());
    for ((m, &sd), &u) in masks.iter().zip(&similarity).zip(&uniq) {
        saliency.add_scaled(m, sd * u);
    }
    Ok(SiduOutput { saliency, masks, p_o, preds, similarity, uniqueness: uniq })
}

pub fn sidu_saliency<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &SiduConfig,
) -> Result<Tensor2D<T>> {
    Ok(sidu_explain(adapter, image, target, cfg)?.saliency)
}
