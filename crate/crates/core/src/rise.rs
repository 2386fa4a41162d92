//! Randomized input sampling.
//!
//! Mask `i` is drawn from its own ChaCha8 stream (`seed`, stream `i`): first
//! the `grid × grid` Bernoulli cells in row-major order, then the crop
//! offsets `x`, `y`. Masks are therefore independent of batch size, thread
//! count and evaluation order, and the weighted sum is reduced in mask-index
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    require_match, run_indexed, target_score_with, Detection, DetectorAdapter, MapStack, MaskStack, MatchThresholds,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, hadamard_mask, Image, Tensor2D};

/// What the weighted mask sum is divided by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiseNormalization {
    /// `p_on · N`.
    Scalar,
    /// Per-pixel `Σ_i M_i`, i.e. the empirical mask mean times `N`.
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiseConfig {
    pub n_masks: usize,
    pub grid: usize,
    pub p_on: f64,
    pub seed: u64,
    pub batch: usize,
    pub normalization: RiseNormalization,
    pub thresholds: MatchThresholds,
}

impl Default for RiseConfig {
    fn default() -> Self {
        Self {
            n_masks: 500,
            grid: 8,
            p_on: 0.1,
            seed: 0,
            batch: 24,
            normalization: RiseNormalization::Scalar,
            thresholds: MatchThresholds::default(),
        }
    }
}

impl RiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 {
            return Err(Error::param("RISE needs at least one mask"));
        }
        if self.grid == 0 {
            return Err(Error::param("RISE grid must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p_on) {
            return Err(Error::param(format!("p_on {} outside [0,1]", self.p_on)));
        }
        if self.batch == 0 {
            return Err(Error::param("RISE batch must be >= 1"));
        }
        Ok(())
    }

    fn check_dims(&self, w: usize, h: usize) -> Result<()> {
        self.validate()?;
        if self.grid > w || self.grid > h {
            return Err(Error::param(format!("grid {} larger than input {w}x{h}", self.grid)));
        }
        Ok(())
    }
}

fn mask_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The `grid × grid` binary cells of mask `index`, row-major.
pub fn sample_cells(cfg: &RiseConfig, index: usize) -> Vec<bool> {
    let mut rng = mask_rng(cfg.seed, index);
    (0..cfg.grid * cfg.grid).map(|_| rng.gen::<f64>() < cfg.p_on).collect()
}

/// Mask `index` at input resolution.
pub fn sample_mask<T: Scalar>(cfg: &RiseConfig, index: usize, width: usize, height: usize) -> Result<Tensor2D<T>> {
    cfg.check_dims(width, height)?;
    let mut rng = mask_rng(cfg.seed, index);
    let g = cfg.grid;
    let cells: Vec<T> = (0..g * g)
        .map(|_| if rng.gen::<f64>() < cfg.p_on { T::one() } else { T::zero() })
        .collect();
    let cell_w = width.div_ceil(g);
    let cell_h = height.div_ceil(g);
    let ox = rng.gen_range(0..=cell_w);
    let oy = rng.gen_range(0..=cell_h);
    let grid = Tensor2D::from_raw(g, g, cells);
    let up = bilinear_resize(&grid, width + cell_w, height + cell_h)?;
    Ok(Tensor2D::from_fn(width, height, |x, y| up.get(x + ox, y + oy)))
}

/// All `n_masks` masks. Holds everything in memory; prefer [`sample_mask`] for large inputs.
pub fn sample_masks<T: Scalar>(cfg: &RiseConfig, width: usize, height: usize) -> Result<MaskStack<T>> {
    cfg.check_dims(width, height)?;
    MapStack::new((0..cfg.n_masks).map(|i| sample_mask(cfg, i, width, height)).collect::<Result<_>>()?)
}

#[derive(Clone, Debug)]
pub struct RiseOutput<T> {
    pub saliency: Tensor2D<T>,
    /// Target score on each masked input, by mask index.
    pub scores: Vec<T>,
}

/// RISE map and per-mask scores for `target` on `image`.
pub fn rise_explain<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &RiseConfig,
) -> Result<RiseOutput<T>> {
    let (w, h) = image.dims();
    cfg.check_dims(w, h)?;
    if cfg.p_on == 0.0 && cfg.normalization == RiseNormalization::Scalar {
        return Err(Error::param("p_on = 0 leaves the RISE normalization undefined"));
    }
    let matched = require_match(adapter, image, target, cfg.thresholds)?;

    let mut weighted = Tensor2D::zeros(w, h);
    let mut coverage = Tensor2D::zeros(w, h);
    let mut scores = Vec::with_capacity(cfg.n_masks);
    let mut start = 0;
    while start < cfg.n_masks {
        let end = (start + cfg.batch).min(cfg.n_masks);
        let chunk = run_indexed(adapter, start..end, |i| {
            let mask = sample_mask::<T>(cfg, i, w, h)?;
            let masked = hadamard_mask(image, &mask)?;
            let score = target_score_with(adapter, &masked, &matched, cfg.thresholds)?;
            Ok((score, mask))
        })?;
        for (score, mask) in chunk {
            weighted.add_scaled(&mask, score);
            if cfg.normalization == RiseNormalization::Empirical {
                coverage.add_scaled(&mask, T::one());
            }
            scores.push(score);
        }
        start = end;
    }

    let saliency = match cfg.normalization {
        RiseNormalization::Scalar => {
            let norm = T::lit(cfg.p_on) * T::from_usize_lossy(cfg.n_masks);
            weighted.map(|v| v / norm)
        }
        RiseNormalization::Empirical => {
            let data = weighted
                .data()
                .iter()
                .zip(coverage.data())
                .map(|(&s, &c)| if c > T::zero() { s / c } else { T::zero() })
                .collect();
            Tensor2D::from_raw(w, h, data)
        }
    };
    Ok(RiseOutput { saliency, scores })
}

pub fn rise_saliency<T: Scalar>(
    adapter: &dyn DetectorAdapter<T>,
    image: &Image<T>,
    target: &Detection<T>,
    cfg: &RiseConfig,
) -> Result<Tensor2D<T>> {
    Ok(rise_explain(adapter, image, target, cfg)?.saliency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p_on: f64, n: usize) -> RiseConfig {
        RiseConfig { p_on, n_masks: n, seed: 11, ..Default::default() }
    }

    #[test]
    fn defaults() {
        let c = RiseConfig::default();
        assert_eq!((c.n_masks, c.grid, c.p_on, c.batch), (500, 8, 0.1, 24));
    }

    #[test]
    fn degenerate_probabilities_are_exact() {
        for (p, v) in [(1.0, 1.0), (0.0, 0.0)] {
            let masks = sample_masks::<f64>(&cfg(p, 20), 24, 16).unwrap();
            assert_eq!(masks.len(), 20);
            assert!(masks.iter().all(|m| m.dims() == (24, 16) && m.data().iter().all(|&x| x == v)));
        }
    }

    #[test]
    fn masks_in_unit_range_and_deterministic() {
        let c = cfg(0.3, 10);
        let a = sample_masks::<f64>(&c, 20, 20).unwrap();
        let b = sample_masks::<f64>(&c, 20, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| m.data().iter().all(|&x| (0.0..=1.0).contains(&x))));
        // Different mask indices draw different masks.
        assert_ne!(a.maps()[0], a.maps()[1]);
    }

    #[test]
    fn cell_draws_concentrate_around_p() {
        let c = RiseConfig::default();
        let n = c.n_masks * c.grid * c.grid;
        let on: usize = (0..c.n_masks).map(|i| sample_cells(&c, i).iter().filter(|&&b| b).count()).sum();
        let mean = on as f64 / n as f64;
        let bound = 3.0 * (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((mean - 0.1).abs() < bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(sample_masks::<f64>(&cfg(0.1, 1), 4, 4), Err(Error::InvalidParameter(_))));
        assert!(matches!(sample_masks::<f64>(&cfg(1.5, 1), 16, 16), Err(Error::InvalidParameter(_))));
        assert!(sample_masks::<f64>(&RiseConfig { n_masks: 0, ..Default::default() }, 16, 16).is_err());
        assert!(sample_masks::<f64>(&RiseConfig { batch: 0, ..Default::default() }, 16, 16).is_err());
    }
}
