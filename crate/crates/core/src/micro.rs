//! A small single-scale convolutional detector with a closed-form head
//! gradient, implementing the whole adapter contract in-process.
//!
//! Layout: `conv1` (3→K, 5×5, stride 2, ReLU), `conv2` (K→K, 3×3, stride 2,
//! ReLU; its output is the feature stack), then a 1×1 head K→(C+1) whose first
//! C channels are per-cell class logits and whose last channel is unused.
//! Convolutions pad by replicating edge pixels, so constant inputs stay
//! constant through the averaging preset. Every cell carries one fixed anchor
//! centred on the cell, `4 × stride` pixels wide.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    BBox, Capabilities, Concurrency, Detection, DetectorAdapter, FeatureStack, GradientStack, InputSize, MapStack,
};
use crate::error::{Error, Result};
use crate::f32t::F32Tensor;
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor2D};

/// Total downsampling from input pixels to feature cells.
pub const CELL_STRIDE: usize = 4;
/// Anchor side length in pixels.
pub const ANCHOR_SIZE: usize = 4 * CELL_STRIDE;

const CONV1_K: usize = 5;
const CONV2_K: usize = 3;
const IN_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroDetConfig {
    pub width: usize,
    pub height: usize,
    /// Feature channels `K`.
    pub kernels: usize,
    /// Class count `C`.
    pub classes: usize,
}

impl MicroDetConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, kernels: 8, classes: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(CELL_STRIDE) || !self.height.is_multiple_of(CELL_STRIDE) {
            return Err(Error::dim(format!(
                "micro-detector input {}x{} must be non-empty and divisible by {CELL_STRIDE}",
                self.width, self.height
            )));
        }
        if self.kernels == 0 || self.classes == 0 {
            return Err(Error::param("micro-detector needs K >= 1 and C >= 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.width / CELL_STRIDE, self.height / CELL_STRIDE)
    }
}

/// How the weights are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightPreset {
    /// ChaCha8 seeded with `seed`; every weight and bias uniform in `[-0.1, 0.1]`,
    /// drawn in layer order conv1, conv2, head (weights before biases).
    SeededRandom { seed: u64 },
    /// Local-averaging convolutions and a class-0 head of `a/K` with bias `b`,
    /// so the class-0 logit of a cell is `a · (averaged brightness) + b`.
    Brightness { a: f64, b: f64 },
}

/// Bias of the non-target classes under the brightness preset. Low enough
/// that these detections never pass the 0.05 re-identification floor.
pub const BRIGHTNESS_OFF_CLASS_BIAS: f64 = -20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MicroWeights<T> {
    /// `[K][3][5][5]`
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    /// `[K][K][3][3]`
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    /// `[C+1][K]`
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> MicroWeights<T> {
    pub fn from_preset(cfg: &MicroDetConfig, preset: WeightPreset) -> Self {
        let k = cfg.kernels;
        let heads = cfg.classes + 1;
        match preset {
            WeightPreset::SeededRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.gen_range(-0.1..=0.1))).collect() };
                Self {
                    conv1_w: draw(k * IN_CHANNELS * CONV1_K * CONV1_K),
                    conv1_b: draw(k),
                    conv2_w: draw(k * k * CONV2_K * CONV2_K),
                    conv2_b: draw(k),
                    head_w: draw(heads * k),
                    head_b: draw(heads),
                }
            }
            WeightPreset::Brightness { a, b } => {
                let c1 = T::lit(1.0 / (IN_CHANNELS * CONV1_K * CONV1_K) as f64);
                let mut conv2_w = Vec::with_capacity(k * k * 9);
                for out in 0..k {
                    let tilt = brightness_tilt(out, k);
                    for _ in 0..k {
                        for dy in -1i32..=1 {
                            for dx in -1i32..=1 {
                                let d = tilt.0 * dx as f64 + tilt.1 * dy as f64;
                                conv2_w.push(T::lit((1.0 + d) / (9 * k) as f64));
                            }
                        }
                    }
                }
                let mut head_w = vec![T::zero(); heads * k];
                let mut head_b = vec![T::lit(BRIGHTNESS_OFF_CLASS_BIAS); heads];
                head_w[..k].fill(T::lit(a / k as f64));
                head_b[0] = T::lit(b);
                head_b[heads - 1] = T::zero();
                Self {
                    conv1_w: vec![c1; k * IN_CHANNELS * CONV1_K * CONV1_K],
                    conv1_b: vec![T::zero(); k],
                    conv2_w,
                    conv2_b: vec![T::zero(); k],
                    head_w,
                    head_b,
                }
            }
        }
    }

    fn check_shapes(&self, cfg: &MicroDetConfig) -> Result<()> {
        let k = cfg.kernels;
        let heads = cfg.classes + 1;
        let want = [
            ("conv1.weight", self.conv1_w.len(), k * IN_CHANNELS * CONV1_K * CONV1_K),
            ("conv1.bias", self.conv1_b.len(), k),
            ("conv2.weight", self.conv2_w.len(), k * k * CONV2_K * CONV2_K),
            ("conv2.bias", self.conv2_b.len(), k),
            ("head.weight", self.head_w.len(), heads * k),
            ("head.bias", self.head_b.len(), heads),
        ];
        for (name, got, n) in want {
            if got != n {
                return Err(Error::dim(format!("{name}: expected {n} values, got {got}")));
            }
        }
        let all = [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.head_w, &self.head_b];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::OutOfRange("non-finite micro-detector weight".into()));
        }
        Ok(())
    }
}

/// Direction of the spatial tilt on conv2 kernel `out`. The tilts cancel
/// over all `k` kernels, so their mean is the plain 3×3 average while the
/// individual feature maps differ.
fn brightness_tilt(out: usize, k: usize) -> (f64, f64) {
    if k < 2 {
        return (0.0, 0.0);
    }
    let theta = std::f64::consts::TAU * out as f64 / k as f64;
    (0.5 * theta.cos(), 0.5 * theta.sin())
}

#[derive(Clone, Debug)]
pub struct MicroDetector<T> {
    cfg: MicroDetConfig,
    weights: MicroWeights<T>,
    label: String,
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub detections: Vec<Detection<T>>,
    pub features: FeatureStack<T>,
}

impl<T: Scalar> MicroDetector<T> {
    pub fn new(cfg: MicroDetConfig, preset: WeightPreset) -> Result<Self> {
        cfg.validate()?;
        let label = match preset {
            WeightPreset::SeededRandom { seed } => format!("seeded-random({seed})"),
            WeightPreset::Brightness { a, b } => format!("brightness(a={a},b={b})"),
        };
        Ok(Self { cfg, weights: MicroWeights::from_preset(&cfg, preset), label })
    }

    pub fn with_weights(cfg: MicroDetConfig, weights: MicroWeights<T>) -> Result<Self> {
        cfg.validate()?;
        weights.check_shapes(&cfg)?;
        Ok(Self { cfg, weights, label: "custom".into() })
    }

    pub fn config(&self) -> &MicroDetConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &MicroWeights<T> {
        &self.weights
    }

    fn check_input(&self, image: &Image<T>) -> Result<()> {
        InputSize::rgb(self.cfg.width, self.cfg.height).check(image)
    }

    /// The conv2 activations.
    pub fn feature_maps(&self, image: &Image<T>) -> Result<FeatureStack<T>> {
        self.check_input(image)?;
        let (w, h) = (self.cfg.width, self.cfg.height);
        let k = self.cfg.kernels;
        let planes: Vec<&[T]> = (0..IN_CHANNELS).map(|c| image.plane(c)).collect();
        let c1 = conv_stride2_relu(&planes, w, h, &self.weights.conv1_w, &self.weights.conv1_b, k, CONV1_K);
        let c1_refs: Vec<&[T]> = c1.iter().map(Vec::as_slice).collect();
        let c2 = conv_stride2_relu(&c1_refs, w / 2, h / 2, &self.weights.conv2_w, &self.weights.conv2_b, k, CONV2_K);
        let (gw, gh) = self.cfg.grid();
        MapStack::new(c2.into_iter().map(|d| Tensor2D::from_raw(gw, gh, d)).collect())
    }

    /// Pre-sigmoid logit of `class` at cell `(cx, cy)` given a feature stack.
    pub fn head_logit(&self, features: &FeatureStack<T>, cell: (usize, usize), class: usize) -> T {
        let k = self.cfg.kernels;
        let row = &self.weights.head_w[class * k..(class + 1) * k];
        let mut acc = self.weights.head_b[class];
        for (wi, f) in row.iter().zip(features) {
            acc += *wi * f.get(cell.0, cell.1);
        }
        acc
    }

    pub fn anchor(&self, cell: (usize, usize)) -> BBox<T> {
        let s = T::from_usize_lossy(CELL_STRIDE);
        let half = T::from_usize_lossy(ANCHOR_SIZE / 2);
        let cx = (T::from_usize_lossy(cell.0) + T::half()) * s;
        let cy = (T::from_usize_lossy(cell.1) + T::half()) * s;
        BBox { x1: cx - half, y1: cy - half, x2: cx + half, y2: cy + half }
    }

    /// Cell whose anchor is `bbox`, if any.
    pub fn cell_of(&self, bbox: &BBox<T>) -> Option<(usize, usize)> {
        let (cx, cy) = bbox.center();
        let s = T::from_usize_lossy(CELL_STRIDE);
        if cx < T::zero() || cy < T::zero() {
            return None;
        }
        let cell = ((cx / s).floor().to_usize()?, (cy / s).floor().to_usize()?);
        let (gw, gh) = self.cfg.grid();
        (cell.0 < gw && cell.1 < gh && self.anchor(cell) == *bbox).then_some(cell)
    }

    /// One detection per (cell, class), sorted by score descending (stable on
    /// row-major cell order, then class), plus the feature stack.
    pub fn forward(&self, image: &Image<T>) -> Result<ForwardOutput<T>> {
        let features = self.feature_maps(image)?;
        let (gw, gh) = self.cfg.grid();
        let mut detections = Vec::with_capacity(gw * gh * self.cfg.classes);
        for cy in 0..gh {
            for cx in 0..gw {
                let bbox = self.anchor((cx, cy));
                for class in 0..self.cfg.classes {
                    let score = self.head_logit(&features, (cx, cy), class).sigmoid();
                    detections.push(Detection { bbox, class_id: class as u32, score });
                }
            }
        }
        detections.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        Ok(ForwardOutput { detections, features })
    }

    /// Gradient of `det`'s pre-sigmoid logit with respect to every feature
    /// element. The 1×1 head makes it zero outside `det`'s cell, where map
    /// `i` receives the head weight `w[class][i]`.
    pub fn grad_score_wrt_features(&self, image: &Image<T>, det: &Detection<T>) -> Result<GradientStack<T>> {
        self.check_input(image)?;
        let cell = self
            .cell_of(&det.bbox)
            .ok_or_else(|| Error::param("detection box is not an anchor of this detector"))?;
        let class = det.class_id as usize;
        if class >= self.cfg.classes {
            return Err(Error::param(format!("class {class} out of range")));
        }
        let (gw, gh) = self.cfg.grid();
        let k = self.cfg.kernels;
        let maps = (0..k)
            .map(|i| {
                let mut g = Tensor2D::zeros(gw, gh);
                g.set(cell.0, cell.1, self.weights.head_w[class * k + i]);
                g
            })
            .collect();
        MapStack::new(maps)
    }

    /// Writes one `.f32t` per layer plus `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let k = self.cfg.kernels;
        let heads = self.cfg.classes + 1;
        let mut layers = Vec::new();
        let w = &self.weights;
        let entries: [(&str, &Vec<T>, Vec<usize>); 6] = [
            ("conv1.weight", &w.conv1_w, vec![k, IN_CHANNELS, CONV1_K, CONV1_K]),
            ("conv1.bias", &w.conv1_b, vec![k]),
            ("conv2.weight", &w.conv2_w, vec![k, k, CONV2_K, CONV2_K]),
            ("conv2.bias", &w.conv2_b, vec![k]),
            ("head.weight", &w.head_w, vec![heads, k]),
            ("head.bias", &w.head_b, vec![heads]),
        ];
        for (name, values, shape) in entries {
            let file = format!("{name}.f32t");
            let (c, hh, ww) = match shape.as_slice() {
                [a, b, c, d] => (a * b, *c, *d),
                [a, b] => (1, *a, *b),
                [a] => (1, 1, *a),
                _ => unreachable!(),
            };
            F32Tensor::new(c, hh, ww, values.iter().map(|v| v.as_f32()).collect())?.save(dir.join(&file))?;
            layers.push(LayerEntry { name: name.into(), shape, file });
        }
        let manifest = WeightsManifest { config: self.cfg, layers };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: WeightsManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let get = |name: &str| -> Result<Vec<T>> {
            let entry = manifest
                .layers
                .iter()
                .find(|l| l.name == name)
                .ok_or_else(|| Error::Format(format!("weights manifest lacks layer {name}")))?;
            let t = F32Tensor::load(dir.join(&entry.file))?;
            let n: usize = entry.shape.iter().product();
            if t.data.len() != n {
                return Err(Error::dim(format!("{name}: manifest shape {:?} vs {} values", entry.shape, t.data.len())));
            }
            Ok(t.data.iter().map(|&v| T::lit(v as f64)).collect())
        };
        let weights = MicroWeights {
            conv1_w: get("conv1.weight")?,
            conv1_b: get("conv1.bias")?,
            conv2_w: get("conv2.weight")?,
            conv2_b: get("conv2.bias")?,
            head_w: get("head.weight")?,
            head_b: get("head.bias")?,
        };
        let mut det = Self::with_weights(manifest.config, weights)?;
        det.label = format!("weights({})", dir.display());
        Ok(det)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct WeightsManifest {
    config: MicroDetConfig,
    layers: Vec<LayerEntry>,
}

/// Stride-2 "same" convolution with edge replication, followed by ReLU.
/// `weights` is `[out][in][ks][ks]`; returns `out` planes of `(w/2)·(h/2)`.
fn conv_stride2_relu<T: Scalar>(
    inputs: &[&[T]],
    w: usize,
    h: usize,
    weights: &[T],
    bias: &[T],
    outputs: usize,
    ks: usize,
) -> Vec<Vec<T>> {
    let pad = ks / 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let padded: Vec<Vec<T>> = inputs
        .iter()
        .map(|plane| {
            let mut p = Vec::with_capacity(pw * ph);
            for y in 0..ph {
                let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                let row = &plane[sy * w..(sy + 1) * w];
                for x in 0..pw {
                    let sx = (x as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                    p.push(row[sx]);
                }
            }
            p
        })
        .collect();
    let (ow, oh) = (w / 2, h / 2);
    let cin = inputs.len();
    (0..outputs)
        .map(|o| {
            let mut out = vec![bias[o]; ow * oh];
            for (c, p) in padded.iter().enumerate() {
                for ky in 0..ks {
                    for kx in 0..ks {
                        let wv = weights[((o * cin + c) * ks + ky) * ks + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let src = &p[(2 * oy + ky) * pw + kx..];
                            let dst = &mut out[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wv * src[2 * ox];
                            }
                        }
                    }
                }
            }
            for v in &mut out {
                *v = v.max(T::zero());
            }
            out
        })
        .collect()
}

impl<T: Scalar> DetectorAdapter<T> for MicroDetector<T> {
    fn describe(&self) -> String {
        format!(
            "micro(K={},C={},{}x{},{})",
            self.cfg.kernels, self.cfg.classes, self.cfg.width, self.cfg.height, self.label
        )
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn input_size(&self) -> InputSize {
        InputSize::rgb(self.cfg.width, self.cfg.height)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }

    fn detect(&self, image: &Image<T>) -> Result<Vec<Detection<T>>> {
        Ok(self.forward(image)?.detections)
    }

    fn features(&self, image: &Image<T>) -> Result<FeatureStack<T>> {
        self.feature_maps(image)
    }

    fn grad_features(&self, image: &Image<T>, target: &Detection<T>) -> Result<GradientStack<T>> {
        self.grad_score_wrt_features(image, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brightness(w: usize, h: usize, a: f64, b: f64) -> MicroDetector<f64> {
        MicroDetector::new(MicroDetConfig::new(w, h), WeightPreset::Brightness { a, b }).unwrap()
    }

    fn class0_scores(det: &MicroDetector<f64>, img: &Image<f64>) -> Vec<f64> {
        let mut v: Vec<_> = det
            .forward(img)
            .unwrap()
            .detections
            .into_iter()
            .filter(|d| d.class_id == 0)
            .map(|d| (det.cell_of(&d.bbox).unwrap(), d.score))
            .collect();
        v.sort_by_key(|(c, _)| (c.1, c.0));
        v.into_iter().map(|(_, s)| s).collect()
    }

    #[test]
    fn brightness_closed_forms() {
        let (a, b) = (6.0, -3.0);
        let det = brightness(16, 16, a, b);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for s in class0_scores(&det, &Image::filled(16, 16, 3, 0.0)) {
            assert!((s - sig(b)).abs() < 1e-12);
        }
        for s in class0_scores(&det, &Image::filled(16, 16, 3, 1.0)) {
            assert!((s - sig(a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_and_sorting() {
        let det = MicroDetector::<f64>::new(MicroDetConfig::new(32, 16), WeightPreset::SeededRandom { seed: 3 }).unwrap();
        let img = Image::filled(32, 16, 3, 0.4);
        let out = det.forward(&img).unwrap();
        assert_eq!(out.features.len(), 8);
        assert_eq!(out.features.dims(), (8, 4));
        assert_eq!(out.detections.len(), 8 * 4 * 2);
        assert!(out.detections.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(MicroDetector::<f64>::new(MicroDetConfig::new(10, 16), WeightPreset::SeededRandom { seed: 0 }).is_err());
        let det = brightness(16, 16, 1.0, 0.0);
        assert!(matches!(det.forward(&Image::filled(8, 16, 3, 0.0)), Err(Error::InvalidDimension(_))));
        assert!(matches!(det.forward(&Image::filled(16, 16, 1, 0.0)), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn gradient_locality_and_closed_form() {
        let (a, k) = (5.0, 8.0);
        let det = brightness(16, 16, a, -2.0);
        let img = Image::filled(16, 16, 3, 0.5);
        let target = det.forward(&img).unwrap().detections[0];
        let cell = det.cell_of(&target.bbox).unwrap();
        let g = det.grad_score_wrt_features(&img, &target).unwrap();
        for m in &g {
            for y in 0..4 {
                for x in 0..4 {
                    let want = if (x, y) == cell { a / k } else { 0.0 };
                    assert!((m.get(x, y) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn foreign_box_rejected_for_gradient() {
        let det = brightness(16, 16, 1.0, 0.0);
        let img = Image::filled(16, 16, 3, 0.5);
        let d = Detection::new(BBox::new(0.0, 0.0, 3.0, 3.0).unwrap(), 0, 0.5).unwrap();
        assert!(det.grad_score_wrt_features(&img, &d).is_err());
    }

    #[test]
    fn weights_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let det = MicroDetector::<f64>::new(MicroDetConfig::new(16, 16), WeightPreset::SeededRandom { seed: 9 }).unwrap();
        det.save(dir.path()).unwrap();
        let back = MicroDetector::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.config(), det.config());
        for (a, b) in back.weights().conv2_w.iter().zip(&det.weights().conv2_w) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
