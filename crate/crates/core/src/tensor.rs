//! Dense raster primitives: 2-D maps, planar images, resizing, masking,
//! blurring and normalization.
//!
//! All operations are pure functions of their inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `height × width` map of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2D<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("zero-sized map {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("non-finite map value at index {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "zero-sized map");
        Self::from_raw(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_raw(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.len())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self += weight * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, weight: T) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor2D<U> {
        Tensor2D::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }
}

/// Planar `channels × height × width` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("zero-sized image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != channels * width * height {
            return Err(Error::dim(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|v| !(v.is_finite() && *v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::OutOfRange(format!("image value at index {i} outside [0,1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), channels * width * height);
        Self { width, height, channels, data }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        assert!(value >= T::zero() && value <= T::one(), "image value outside [0,1]");
        Self::from_raw(width, height, channels, vec![value; channels * width * height])
    }

    /// Builds an image from one map per channel. Values are clamped to `[0, 1]`.
    pub fn from_planes(planes: &[Tensor2D<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::dim("image needs at least one plane"))?;
        if planes.iter().any(|p| p.dims() != first.dims()) {
            return Err(Error::dim("image planes differ in size"));
        }
        let data = planes
            .iter()
            .flat_map(|p| p.data().iter().map(|v| v.clamp01()))
            .collect();
        Self::new(first.width(), first.height(), planes.len(), data)
    }

    /// Replicates a single-channel image to three channels; 3-channel images are returned as is.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Self::from_raw(self.width, self.height, 3, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> T {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_tensor(&self, c: usize) -> Tensor2D<T> {
        Tensor2D::from_raw(self.width, self.height, self.plane(c).to_vec())
    }

    /// Sets pixel `index` (row-major) in every channel.
    #[inline]
    pub(crate) fn set_pixel(&mut self, index: usize, value: T) {
        let n = self.plane_len();
        for c in 0..self.channels {
            self.data[c * n + index] = value;
        }
    }

    /// Copies pixel `index` (row-major) of every channel from `src`.
    #[inline]
    pub(crate) fn copy_pixel(&mut self, src: &Self, index: usize) {
        let n = self.plane_len();
        for c in 0..self.channels {
            self.data[c * n + index] = src.data[c * n + index];
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image::from_raw(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|v| U::lit(v.as_f64()).clamp01()).collect(),
        )
    }
}

/// Resamples `src` to `out_w × out_h` with the half-pixel-center convention:
/// `x_s = (x_d + 0.5) * w_src / w_dst - 0.5`, clamped to the border.
pub fn bilinear_resize<T: Scalar>(src: &Tensor2D<T>, out_w: usize, out_h: usize) -> Result<Tensor2D<T>> {
    if src.is_empty() || out_w == 0 || out_h == 0 {
        return Err(Error::dim(format!(
            "cannot resize {}x{} to {out_w}x{out_h}",
            src.width(),
            src.height()
        )));
    }
    if src.dims() == (out_w, out_h) {
        return Ok(src.clone());
    }
    let xs = sample_positions::<T>(src.width(), out_w);
    let ys = sample_positions::<T>(src.height(), out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    let sw = src.width();
    let d = src.data();
    for &(y0, y1, fy) in &ys {
        let r0 = &d[y0 * sw..(y0 + 1) * sw];
        let r1 = &d[y1 * sw..(y1 + 1) * sw];
        for &(x0, x1, fx) in &xs {
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Ok(Tensor2D::from_raw(out_w, out_h, out))
}

/// `(lo, hi, frac)` source taps for every destination coordinate.
fn sample_positions<T: Scalar>(src_len: usize, dst_len: usize) -> Vec<(usize, usize, T)> {
    let scale = T::from_usize_lossy(src_len) / T::from_usize_lossy(dst_len);
    let last = T::from_usize_lossy(src_len - 1);
    (0..dst_len)
        .map(|d| {
            let s = ((T::from_usize_lossy(d) + T::half()) * scale - T::half())
                .max(T::zero())
                .min(last);
            let lo = s.floor();
            let i = lo.to_usize().unwrap_or(0);
            (i, (i + 1).min(src_len - 1), s - lo)
        })
        .collect()
}

/// Linear interpolation kept inside `[min(a,b), max(a,b)]` despite rounding.
#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    let v = a + t * (b - a);
    v.max(a.min(b)).min(a.max(b))
}

/// Multiplies every channel of `image` elementwise by `mask`.
pub fn hadamard_mask<T: Scalar>(image: &Image<T>, mask: &Tensor2D<T>) -> Result<Image<T>> {
    if image.dims() != mask.dims() {
        return Err(Error::dim(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let m = mask.data();
    let data = image
        .data()
        .chunks_exact(image.plane_len())
        .flat_map(|plane| plane.iter().zip(m).map(|(&v, &w)| (v * w).clamp01()))
        .collect();
    Ok(Image::from_raw(image.width(), image.height(), image.channels(), data))
}

/// Normalized sampled Gaussian of half-width `radius`.
pub fn gaussian_kernel<T: Scalar>(sigma: T, radius: usize) -> Result<Vec<T>> {
    if !(sigma > T::zero() && sigma.is_finite()) {
        return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::param("gaussian radius must be >= 1"));
    }
    let r = radius as isize;
    let denom = T::lit(2.0) * sigma * sigma;
    let raw: Vec<T> = (-r..=r)
        .map(|i| {
            let x = T::lit(i as f64);
            (-(x * x) / denom).exp()
        })
        .collect();
    let total: T = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Separable Gaussian blur with edge replication, applied per channel.
pub fn gaussian_blur<T: Scalar>(image: &Image<T>, sigma: T, radius: usize) -> Result<Image<T>> {
    let kernel = gaussian_kernel(sigma, radius)?;
    let (w, h) = image.dims();
    let mut data = Vec::with_capacity(image.data().len());
    let mut tmp = vec![T::zero(); w * h];
    for plane in image.data().chunks_exact(w * h) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                tmp[y * w + x] = convolve_clamped(&kernel, radius, x, w, |i| row[i]);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = convolve_clamped(&kernel, radius, y, h, |i| tmp[i * w + x]);
                data.push(v.clamp01());
            }
        }
    }
    Ok(Image::from_raw(w, h, image.channels(), data))
}

/// One tap of a 1-D convolution with clamped indices. Written as
/// `center + Σ k·(x − center)` so constant signals come back bit-exact.
#[inline]
fn convolve_clamped<T: Scalar>(kernel: &[T], radius: usize, at: usize, len: usize, sample: impl Fn(usize) -> T) -> T {
    let center = sample(at);
    let mut acc = T::zero();
    for (k, &wk) in kernel.iter().enumerate() {
        let i = (at + k).saturating_sub(radius).min(len - 1);
        acc += wk * (sample(i) - center);
    }
    center + acc
}

/// Affine rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn minmax_normalize<T: Scalar>(map: &Tensor2D<T>) -> Tensor2D<T> {
    let (lo, hi) = (map.min(), map.max());
    if hi <= lo {
        return Tensor2D::zeros(map.width(), map.height());
    }
    let range = hi - lo;
    map.map(|v| ((v - lo) / range).clamp01())
}
