//! The detector adapter contract, box geometry, top-box selection and the
//! re-identification search used to score a box on perturbed inputs.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor2D};

/// Axis-aligned box in input-image pixels, corner form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !all_finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::OutOfRange(format!(
                "invalid box [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> T {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn center(&self) -> (T, T) {
        ((self.x1 + self.x2) * T::half(), (self.y1 + self.y2) * T::half())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1.as_f64(), self.y1.as_f64(), self.x2.as_f64(), self.y2.as_f64()]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]), T::lit(a[3]))
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= T::zero() || ih <= T::zero() {
        return T::zero();
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp01()
}

/// One detector output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub class_id: u32,
    pub score: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BBox<T>, class_id: u32, score: T) -> Result<Self> {
        let d = Self { bbox, class_id, score };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.score >= T::zero() && self.score <= T::one()) {
            return Err(Error::OutOfRange(format!("detection score {} outside [0,1]", self.score)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionWire {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: u32,
    score: f64,
}

impl<T: Scalar> Serialize for Detection<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DetectionWire {
            bbox: self.bbox.to_array(),
            class_id: self.class_id,
            score: self.score.as_f64(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Detection<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = DetectionWire::deserialize(d)?;
        let bbox = BBox::from_array(w.bbox).map_err(serde::de::Error::custom)?;
        Detection::new(bbox, w.class_id, T::lit(w.score)).map_err(serde::de::Error::custom)
    }
}

/// Network output vector `p`: per-class confidences, or one matched score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector<T>(Vec<T>);

impl<T: Scalar> ScoreVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::OutOfRange(format!("score {v} outside [0,1]")));
        }
        Ok(Self(values))
    }

    pub fn scalar(score: T) -> Result<Self> {
        Self::new(vec![score])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Euclidean distance; errors on length mismatch.
    pub fn distance(&self, other: &Self) -> Result<T> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "score vectors differ in length ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt())
    }
}

/// `N` equally sized maps: a feature stack `F`, its gradient stack `G`, or a mask stack `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapStack<T> {
    maps: Vec<Tensor2D<T>>,
}

pub type FeatureStack<T> = MapStack<T>;
pub type GradientStack<T> = MapStack<T>;
pub type MaskStack<T> = MapStack<T>;

impl<T: Scalar> MapStack<T> {
    pub fn new(maps: Vec<Tensor2D<T>>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::dim("map stack must hold at least one map"))?;
        if maps.iter().any(|m| m.dims() != first.dims()) {
            return Err(Error::dim("maps in a stack must share one size"));
        }
        Ok(Self { maps })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// `(width, height)` shared by every map.
    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[Tensor2D<T>] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<Tensor2D<T>> {
        self.maps
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tensor2D<T>> {
        self.maps.iter()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len() && self.dims() == other.dims()
    }
}

impl<'a, T> IntoIterator for &'a MapStack<T> {
    type Item = &'a Tensor2D<T>;
    type IntoIter = std::slice::Iter<'a, Tensor2D<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.maps.iter()
    }
}

/// Which optional parts of the contract an adapter implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub features: bool,
    pub grad_features: bool,
}

impl Capabilities {
    pub const DETECT_ONLY: Self = Self { features: false, grad_features: false };
    pub const ALL: Self = Self { features: true, grad_features: true };

    pub fn validate(&self) -> Result<()> {
        if self.grad_features && !self.features {
            return Err(Error::param("grad capability requires the features capability"));
        }
        Ok(())
    }

    /// Wire names, `detect` always first.
    pub fn names(&self) -> Vec<&'static str> {
        let mut v = vec!["detect"];
        if self.features {
            v.push("features");
        }
        if self.grad_features {
            v.push("grad");
        }
        v
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let has = |n: &str| names.iter().any(|s| s.as_ref() == n);
        if !has("detect") {
            return Err(Error::Protocol("peer does not offer the required `detect` capability".into()));
        }
        let caps = Self { features: has("features"), grad_features: has("grad") };
        caps.validate().map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(caps)
    }
}

/// Whether the engine may call `detect` from several threads at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concurrency {
    Parallel,
    Serial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSize {
    pub fn rgb(width: usize, height: usize) -> Self {
        Self { channels: 3, height, width }
    }

    pub fn check<T: Scalar>(&self, image: &Image<T>) -> Result<()> {
        if (image.channels(), image.height(), image.width()) != (self.channels, self.height, self.width) {
            return Err(Error::dim(format!(
                "image {}x{}x{} does not match detector input {}x{}x{}",
                image.channels(),
                image.height(),
                image.width(),
                self.channels,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// The narrow contract a detector satisfies to be explained.
///
/// `detect` is mandatory. `features` returns the maps of the layer the
/// adapter designates as its last convolution layer; `grad_features` returns
/// the gradient of `target`'s pre-activation score with respect to those maps.
pub trait DetectorAdapter<T: Scalar>: Send + Sync {
    fn describe(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn input_size(&self) -> InputSize;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }

    fn detect(&self, image: &Image<T>) -> Result<Vec<Detection<T>>>;

    fn features(&self, _image: &Image<T>) -> Result<FeatureStack<T>> {
        Err(Error::CapabilityMissing("features"))
    }

    fn grad_features(&self, _image: &Image<T>, _target: &Detection<T>) -> Result<GradientStack<T>> {
        Err(Error::CapabilityMissing("grad"))
    }
}

impl<T: Scalar, A: DetectorAdapter<T> + ?Sized> DetectorAdapter<T> for &A {
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn input_size(&self) -> InputSize {
        (**self).input_size()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn detect(&self, image: &Image<T>) -> Result<Vec<Detection<T>>> {
        (**self).detect(image)
    }
    fn features(&self, image: &Image<T>) -> Result<FeatureStack<T>> {
        (**self).features(image)
    }
    fn grad_features(&self, image: &Image<T>, target: &Detection<T>) -> Result<GradientStack<T>> {
        (**self).grad_features(image, target)
    }
}

impl<T: Scalar, A: DetectorAdapter<T> + ?Sized> DetectorAdapter<T> for Box<A> {
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn input_size(&self) -> InputSize {
        (**self).input_size()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn detect(&self, image: &Image<T>) -> Result<Vec<Detection<T>>> {
        (**self).detect(image)
    }
    fn features(&self, image: &Image<T>) -> Result<FeatureStack<T>> {
        (**self).features(image)
    }
    fn grad_features(&self, image: &Image<T>, target: &Detection<T>) -> Result<GradientStack<T>> {
        (**self).grad_features(image, target)
    }
}

/// Highest-scoring detection; ties go to the lowest index.
pub fn select_top_box<T: Scalar>(dets: &[Detection<T>]) -> Result<Detection<T>> {
    let mut best: Option<&Detection<T>> = None;
    for d in dets {
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    best.copied().ok_or(Error::NoDetections)
}

/// Thresholds of the re-identification search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub score_min: f64,
    pub iou_min: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self { score_min: 0.05, iou_min: 0.5 }
    }
}

/// Index of the detection that re-identifies `target`: among candidates with
/// `score >= score_min` and `iou >= iou_min`, the highest IoU wins, then the
/// higher score, then the lower index.
pub fn match_index<T: Scalar>(dets: &[Detection<T>], target: &Detection<T>, th: MatchThresholds) -> Option<usize> {
    let score_min = T::lit(th.score_min);
    let iou_min = T::lit(th.iou_min);
    let mut best: Option<(usize, T, T)> = None;
    for (i, d) in dets.iter().enumerate() {
        if d.score < score_min {
            continue;
        }
        let o = iou(&d.bbox, &target.bbox);
        if o < iou_min {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bo, bs)) => o > bo || (o == bo && d.score > bs),
        };
        if better {
            best = Some((i, o, d.score));
        }
    }
    best.map(|(i, _, _)| i)
}

pub fn match_box<T: Scalar>(dets: &[Detection<T>], target: &Detection<T>, th: MatchThresholds) -> Option<Detection<T>> {
    match_index(dets, target, th).map(|i| dets[i])
}

/// Runs `detect` with input and output validation.
pub fn checked_detect<T: Scalar>(adapter: &dyn DetectorAdapter<T>, image: &Image<T>) -> Result<Vec<Detection<T>>> {
    adapter.input_size().check(image)?;
    let dets = adapter.detect(image)?;
    for d in &dets {
        d.validate()?;
    }
    Ok(dets)
}

/// Score of the detection re-identifying `target` on `image`, or 0 when none matches.
pub fn target_score_with<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    th: MatchThresholds,
) -> Result<T> {
    let dets = checked_detect(adapter, image)?;
    Ok(match_box(&dets, target, th).map_or(T::zero(), |d| d.score))
}

pub fn target_score<T: Scalar>(adapter: &dyn DetectorAdapter<T>, image: &Image<T>, target: &Detection<T>) -> Result<T> {
    target_score_with(adapter, image, target, MatchThresholds::default())
}

/// Re-identifies `target` on the unperturbed `image`, failing with `NoMatch`.
pub fn require_match<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    th: MatchThresholds,
) -> Result<Detection<T>> {
    let dets = checked_detect(adapter, image)?;
    match_box(&dets, target, th).ok_or(Error::NoMatch)
}

/// Evaluates `f(0..n)` honoring the adapter's concurrency policy. Results
/// come back in index order whatever the scheduling.
pub(crate) fn run_indexed<T, R, F>(adapter: &dyn DetectorAdapter<T>, range: std::ops::Range<usize>, f: F) -> Result<Vec<R>>
where
    T: Scalar,
    R: Send,
    F: Fn(usize) -> Result<R> + Send + Sync,
{
    match adapter.concurrency() {
        Concurrency::Parallel => range.into_par_iter().map(f).collect(),
        Concurrency::Serial => range.map(f).collect(),
    }
}

/// Emits one fixed box whose score never depends on the input.
#[derive(Clone, Debug)]
pub struct ConstantAdapter<T> {
    input: InputSize,
    detection: Detection<T>,
}

impl<T: Scalar> ConstantAdapter<T> {
    pub fn new(input: InputSize, score: T) -> Result<Self> {
        let (w, h) = (T::from_usize_lossy(input.width), T::from_usize_lossy(input.height));
        let quarter = T::lit(0.25);
        let bbox = BBox::new(w * quarter, h * quarter, w - w * quarter, h - h * quarter)?;
        Ok(Self { input, detection: Detection::new(bbox, 0, score)? })
    }

    pub fn detection(&self) -> Detection<T> {
        self.detection
    }
}

impl<T: Scalar> DetectorAdapter<T> for ConstantAdapter<T> {
    fn describe(&self) -> String {
        format!("constant(score={})", self.detection.score)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::DETECT_ONLY
    }

    fn input_size(&self) -> InputSize {
        self.input
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }

    fn detect(&self, _image: &Image<T>) -> Result<Vec<Detection<T>>> {
        Ok(vec![self.detection])
    }
}
