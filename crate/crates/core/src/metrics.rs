//! Deletion and insertion curves, their areas, and random-order baselines.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{run_indexed, target_score_with, Detection, DetectorAdapter, MatchThresholds};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gaussian_blur, Image, Tensor2D};

/// Starting image of the insertion curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InsertionBase {
    Blur { sigma: f64, radius: usize },
    Fill { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub steps: usize,
    pub deletion_fill: f64,
    pub insertion_base: InsertionBase,
    pub thresholds: MatchThresholds,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            deletion_fill: 0.0,
            insertion_base: InsertionBase::Blur { sigma: 5.0, radius: 11 },
            thresholds: MatchThresholds::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("metric needs at least one step"));
        }
        if !(0.0..=1.0).contains(&self.deletion_fill) {
            return Err(Error::param("deletion fill outside [0,1]"));
        }
        if let InsertionBase::Fill { value } = self.insertion_base {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::param("insertion fill outside [0,1]"));
            }
        }
        Ok(())
    }
}

/// `(fraction of pixels modified, target score)` pairs, `steps + 1` long.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve<T> {
    pub points: Vec<(T, T)>,
}

impl<T: Scalar> Curve<T> {
    pub fn scores(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,score\n");
        for (f, v) in &self.points {
            let _ = writeln!(s, "{f},{v}");
        }
        s
    }
}

/// Trapezoidal area over the fraction axis.
pub fn auc<T: Scalar>(curve: &Curve<T>) -> T {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * T::half())
        .sum()
}

/// Pixel indices by descending saliency; ties by ascending row-major index.
pub fn pixel_order<T: Scalar>(saliency: &Tensor2D<T>) -> Vec<usize> {
    let d = saliency.data();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).expect("finite saliency"));
    order
}

/// Pixels modified after step `k`.
#[inline]
fn pixels_at_step(k: usize, steps: usize, total: usize) -> usize {
    k * total / steps
}

fn check_order(order: &[usize], total: usize) -> Result<()> {
    if order.len() != total {
        return Err(Error::dim(format!("pixel order has {} entries for {total} pixels", order.len())));
    }
    let mut seen = vec![false; total];
    for &i in order {
        if i >= total || std::mem::replace(&mut seen[i], true) {
            return Err(Error::param("pixel order is not a permutation"));
        }
    }
    Ok(())
}

fn check_saliency<T: Scalar>(image: &Image<T>, saliency: &Tensor2D<T>) -> Result<()> {
    if saliency.dims() != image.dims() {
        return Err(Error::dim(format!(
            "saliency {}x{} does not match image {}x{}",
            saliency.width(),
            saliency.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn curve_from<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    start: &Image<T>,
    target: &Detection<T>,
    order: &[usize],
    cfg: &MetricConfig,
    apply: impl Fn(&mut Image<T>, usize) + Send + Sync,
) -> Result<Curve<T>> {
    cfg.validate()?;
    let total = start.plane_len();
    check_order(order, total)?;
    let steps = cfg.steps;
    let scores = run_indexed(adapter, 0..steps + 1, |k| {
        let mut img = start.clone();
        for &p in &order[..pixels_at_step(k, steps, total)] {
            apply(&mut img, p);
        }
        target_score_with(adapter, &img, target, cfg.thresholds)
    })?;
    let n = T::from_usize_lossy(steps);
    Ok(Curve {
        points: scores
            .into_iter()
            .enumerate()
            .map(|(k, s)| (T::from_usize_lossy(k) / n, s))
            .collect(),
    })
}

pub fn deletion_curve_for_order<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    order: &[usize],
    cfg: &MetricConfig,
) -> Result<Curve<T>> {
    let fill = T::lit(cfg.deletion_fill);
    curve_from(adapter, image, target, order, cfg, |img, p| img.set_pixel(p, fill))
}

pub fn insertion_base<T: Scalar>(image: &Image<T>, cfg: &MetricConfig) -> Result<Image<T>> {
    match cfg.insertion_base {
        InsertionBase::Blur { sigma, radius } => gaussian_blur(image, T::lit(sigma), radius),
        InsertionBase::Fill { value } => Ok(Image::filled(image.width(), image.height(), image.channels(), T::lit(value))),
    }
}

pub fn insertion_curve_for_order<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    order: &[usize],
    cfg: &MetricConfig,
) -> Result<Curve<T>> {
    let base = insertion_base(image, cfg)?;
    curve_from(adapter, &base, target, order, cfg, |img, p| img.copy_pixel(image, p))
}

/// Score as the most salient pixels are progressively set to the fill value.
pub fn deletion_curve<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    saliency: &Tensor2D<T>,
    cfg: &MetricConfig,
) -> Result<Curve<T>> {
    check_saliency(image, saliency)?;
    deletion_curve_for_order(adapter, image, target, &pixel_order(saliency), cfg)
}

/// Score as the most salient pixels are progressively restored onto the insertion base.
pub fn insertion_curve<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    saliency: &Tensor2D<T>,
    cfg: &MetricConfig,
) -> Result<Curve<T>> {
    check_saliency(image, saliency)?;
    insertion_curve_for_order(adapter, image, target, &pixel_order(saliency), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub deletion_auc: f64,
    pub insertion_auc: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub deletion: Curve<T>,
    pub insertion: Curve<T>,
    pub summary: AucSummary,
}

pub fn evaluate<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    saliency: &Tensor2D<T>,
    cfg: &MetricConfig,
) -> Result<Evaluation<T>> {
    let deletion = deletion_curve(adapter, image, target, saliency, cfg)?;
    let insertion = insertion_curve(adapter, image, target, saliency, cfg)?;
    let summary = AucSummary { deletion_auc: auc(&deletion).as_f64(), insertion_auc: auc(&insertion).as_f64() };
    Ok(Evaluation { deletion, insertion, summary })
}

/// Mean deletion and insertion AUC over the given pixel orderings.
pub fn mean_aucs_over_orders<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &MetricConfig,
    orders: &[Vec<usize>],
) -> Result<AucSummary> {
    if orders.is_empty() {
        return Err(Error::param("need at least one ordering"));
    }
    let (mut del, mut ins) = (0.0, 0.0);
    for order in orders {
        del += auc(&deletion_curve_for_order(adapter, image, target, order, cfg)?).as_f64();
        ins += auc(&insertion_curve_for_order(adapter, image, target, order, cfg)?).as_f64();
    }
    let n = orders.len() as f64;
    Ok(AucSummary { deletion_auc: del / n, insertion_auc: ins / n })
}

/// Uniform random ordering number `trial`, from ChaCha8 (`seed`, stream `trial`).
pub fn random_order(pixels: usize, seed: u64, trial: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let mut order: Vec<usize> = (0..pixels).collect();
    order.shuffle(&mut rng);
    order
}

/// AUCs averaged over `trials` random pixel orderings.
pub fn random_baseline<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &MetricConfig,
    seed: u64,
    trials: usize,
) -> Result<AucSummary> {
    if trials == 0 {
        return Err(Error::param("random baseline needs at least one trial"));
    }
    let orders: Vec<_> = (0..trials).map(|t| random_order(image.plane_len(), seed, t)).collect();
    mean_aucs_over_orders(adapter, image, target, cfg, &orders)
}
