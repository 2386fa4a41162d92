//! Shared fixtures and independent reference implementations for the
//! integration tests. Nothing here calls into the library's numeric code
//! except to fetch adapter outputs.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsal::detector::{BBox, Capabilities, Concurrency, Detection, DetectorAdapter, FeatureStack, GradientStack, InputSize};
use xsal::micro::{MicroDetConfig, MicroDetector, WeightPreset};
use xsal::tensor::{Image, Tensor2D};
use xsal::Result;

pub const BRIGHT_A: f64 = 10.0;
pub const BRIGHT_B: f64 = -3.0;

pub fn seeded_image(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * w * h).map(|_| rng.gen::<f64>()).collect();
    Image::new(w, h, 3, data).unwrap()
}

/// Dim noisy background with one Gaussian bright blob at a seeded position.
pub fn blob_image(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.gen_range(0.25..0.75) * w as f64;
    let cy = rng.gen_range(0.25..0.75) * h as f64;
    let r = rng.gen_range(0.08..0.14) * w.min(h) as f64;
    let mut data = Vec::with_capacity(3 * w * h);
    let noise: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..0.08)).collect();
    for _ in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let v = (-d2 / (2.0 * r * r)).exp() + noise[y * w + x];
                data.push(v.min(1.0));
            }
        }
    }
    Image::new(w, h, 3, data).unwrap()
}

pub fn random_micro(w: usize, h: usize, seed: u64) -> MicroDetector<f64> {
    MicroDetector::new(MicroDetConfig::new(w, h), WeightPreset::SeededRandom { seed }).unwrap()
}

pub fn brightness_micro(w: usize, h: usize) -> MicroDetector<f64> {
    MicroDetector::new(MicroDetConfig::new(w, h), WeightPreset::Brightness { a: BRIGHT_A, b: BRIGHT_B }).unwrap()
}

pub fn top_detection<A: DetectorAdapter<f64>>(adapter: &A, image: &Image<f64>) -> Detection<f64> {
    let dets = adapter.detect(image).unwrap();
    let mut best = dets[0];
    for d in &dets {
        if d.score > best.score {
            best = *d;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Reference numerics.

/// Half-pixel-center bilinear resize, evaluated per output pixel.
pub fn ref_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let coord = |d: usize, s_len: usize, d_len: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * (s_len as f64 / d_len as f64) - 0.5).clamp(0.0, (s_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(s_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[y * dw + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

pub fn ref_iou(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let ua = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if inter == 0.0 {
        0.0
    } else {
        inter / ua
    }
}

/// Matched score under the default thresholds, 0 when nothing qualifies.
pub fn ref_target_score(dets: &[Detection<f64>], target: &Detection<f64>) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for d in dets {
        let o = ref_iou(&d.bbox, &target.bbox);
        if d.score < 0.05 || o < 0.5 {
            continue;
        }
        match best {
            Some((bo, bs)) if o < bo || (o == bo && d.score <= bs) => {}
            _ => best = Some((o, d.score)),
        }
    }
    best.map_or(0.0, |(_, s)| s)
}

/// Grad-CAM by explicit loops over maps and pixels, at feature resolution.
pub fn ref_gradcam(features: &[Vec<f64>], grads: &[Vec<f64>], relu: bool) -> Vec<f64> {
    let n_px = features[0].len();
    let mut alphas = Vec::new();
    for g in grads {
        let mut s = 0.0;
        for v in g {
            s += v;
        }
        alphas.push(s / n_px as f64);
    }
    let mut out = vec![0.0; n_px];
    for p in 0..n_px {
        for (i, f) in features.iter().enumerate() {
            let t = alphas[i] * f[p];
            out[p] += if relu { t.max(0.0) } else { t };
        }
    }
    out
}

pub fn ref_minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// SIDU with scalar predictions, by explicit loops.
pub fn ref_sidu<A: DetectorAdapter<f64>>(
    adapter: &A,
    image: &Image<f64>,
    target: &Detection<f64>,
    features: &[Vec<f64>],
    fw: usize,
    fh: usize,
    sigma: f64,
) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let p_o = ref_target_score(&adapter.detect(image).unwrap(), target);
    let mut masks = Vec::new();
    let mut preds = Vec::new();
    for f in features {
        let up = ref_resize(&ref_minmax(f), fw, fh, w, h);
        let mask: Vec<f64> = up.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
        let mut data = Vec::with_capacity(3 * w * h);
        for c in 0..3 {
            for (v, m) in image.plane(c).iter().zip(&mask) {
                data.push(v * m);
            }
        }
        let masked = Image::new(w, h, 3, data).unwrap();
        preds.push(ref_target_score(&adapter.detect(&masked).unwrap(), target));
        masks.push(mask);
    }
    let n = preds.len();
    let mut out = vec![0.0; w * h];
    for i in 0..n {
        let sd = (-(p_o - preds[i]).abs() / (2.0 * sigma * sigma)).exp();
        let mut u = 0.0;
        for j in 0..n {
            u += (preds[i] - preds[j]).abs();
        }
        for p in 0..w * h {
            out[p] += sd * u * masks[i][p];
        }
    }
    out
}

/// Trapezoid rule over a uniform grid on [0, 1].
pub fn ref_auc(scores: &[f64]) -> f64 {
    let dx = 1.0 / (scores.len() - 1) as f64;
    scores.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            go(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// Adapters.

/// Counts `detect` calls of the wrapped adapter.
pub struct Counting<A> {
    pub inner: A,
    pub calls: AtomicUsize,
}

impl<A> Counting<A> {
    pub fn new(inner: A) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<A: DetectorAdapter<f64>> DetectorAdapter<f64> for Counting<A> {
    fn describe(&self) -> String {
        self.inner.describe()
    }
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
    fn input_size(&self) -> InputSize {
        self.inner.input_size()
    }
    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }
    fn detect(&self, image: &Image<f64>) -> Result<Vec<Detection<f64>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.detect(image)
    }
    fn features(&self, image: &Image<f64>) -> Result<FeatureStack<f64>> {
        self.inner.features(image)
    }
    fn grad_features(&self, image: &Image<f64>, target: &Detection<f64>) -> Result<GradientStack<f64>> {
        self.inner.grad_features(image, target)
    }
}

/// One fixed box over a 2×2 image; score is the channel-averaged pixel sum
/// weighted by [`TOY_WEIGHTS`] and divided by their total.
pub struct ToyScorer;

pub const TOY_WEIGHTS: [f64; 4] = [4.0, 3.0, 2.0, 1.0];

impl ToyScorer {
    pub fn box_() -> Detection<f64> {
        Detection::new(BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), 0, 1.0).unwrap()
    }

    pub fn score_of(pixels: &[f64; 4]) -> f64 {
        let total: f64 = TOY_WEIGHTS.iter().sum();
        TOY_WEIGHTS.iter().zip(pixels).map(|(w, p)| w * p).sum::<f64>() / total
    }
}

impl DetectorAdapter<f64> for ToyScorer {
    fn describe(&self) -> String {
        "toy-2x2".into()
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities::DETECT_ONLY
    }
    fn input_size(&self) -> InputSize {
        InputSize::rgb(2, 2)
    }
    fn detect(&self, image: &Image<f64>) -> Result<Vec<Detection<f64>>> {
        let mut px = [0.0; 4];
        for (p, v) in px.iter_mut().enumerate() {
            *v = (0..3).map(|c| image.plane(c)[p]).sum::<f64>() / 3.0;
        }
        let mut d = Self::box_();
        d.score = Self::score_of(&px);
        Ok(vec![d])
    }
}

pub fn tensor(w: usize, h: usize, data: Vec<f64>) -> Tensor2D<f64> {
    Tensor2D::new(w, h, data).unwrap()
}
